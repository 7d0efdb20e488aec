use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cbir_core::Error as CoreError;
use serde_json::json;
use thiserror::Error;

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("record {line}: image file `{path}` not found")]
    MissingFile { line: usize, path: String },

    #[error("record {line} ({path}): {source}")]
    Record {
        line: usize,
        path: String,
        #[source]
        source: CoreError,
    },

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    #[error("candidate pool is empty for setting {0}")]
    EmptyPool(String),

    #[error("payload too large: {0}")]
    TooLarge(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ServiceError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Core(e) | ServiceError::Record { source: e, .. } => core_status(e),
            ServiceError::MissingFile { .. } | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::EmptyPool(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Io { .. } | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

fn core_status(e: &CoreError) -> StatusCode {
    match e {
        CoreError::Io { .. } | CoreError::Divergence { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        CoreError::DuplicateId(_) => StatusCode::CONFLICT,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}
