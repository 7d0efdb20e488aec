//! Content-based retrieval of grayscale lesion ROIs.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! * [`imagecore`]: rasters, manifests, ROI cropping, resizing and augmentation
//! * [`frangi`]: Gaussian scale space, Hessian eigenvalues and the multiscale
//!   structure response
//! * [`descriptor`]: feature stacks, GeM pooling and L2 normalization
//! * [`metric`]: cosine distance, the margin triplet loss and an SGD-trained
//!   embedding head
//! * [`retrieval`]: exact top-k search, patient-aware evaluation, ranking
//!   metrics and k-NN classification
//! * [`formats`]: binary interchange files for descriptors, heads and indices
//! * [`phantom`]: synthetic blob / ridge / noise test images

pub mod descriptor;
pub mod error;
pub mod formats;
pub mod frangi;
pub mod imagecore;
pub mod metric;
pub mod phantom;
pub mod retrieval;

pub use error::{Error, Result};
