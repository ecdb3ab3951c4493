use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use synthdet_core::genclient::GenerationError;
use synthdet_core::{Error, FieldError};

/// Body of every non-2xx response.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: msg.into(),
                fields: Vec::new(),
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_)
            | Error::InvalidBox(_)
            | Error::Parse { .. }
            | Error::Record { .. }
            | Error::UnknownImages { .. }
            | Error::DimensionMismatch { .. }
            | Error::MetricMismatch(_)
            | Error::Empty(_)
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::Generation(GenerationError::InvalidJob(_)) => StatusCode::BAD_REQUEST,
            Error::Generation(_) => StatusCode::BAD_GATEWAY,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            Error::Conflict { .. } | Error::AlreadyExists(_) => StatusCode::CONFLICT,
            Error::Io { .. } | Error::Image(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let fields = match &e {
            Error::Validation(f) | Error::Generation(GenerationError::InvalidJob(f)) => f.clone(),
            Error::Record { field, message, .. } => vec![FieldError::new(field.clone(), message.clone())],
            _ => Vec::new(),
        };
        if status.is_server_error() {
            tracing::error!("{e}");
        }
        Self {
            status,
            body: ErrorBody {
                error: e.to_string(),
                fields,
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
