//! HTTP service and command line front end for the lesion retrieval engine.
//!
//! [`engine::Engine`] owns the persistent index, thumbnails and annotations.
//! [`http::router`] exposes it under `/api/v1`; [`cli`] wraps the batch
//! pipeline (ingest, describe, train, evaluate, filter preview) and `serve`.

pub mod annotation;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod http;
pub mod preview;

pub use config::ServiceConfig;
pub use engine::Engine;
pub use error::{ServiceError, ServiceResult};
