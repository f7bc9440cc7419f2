use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use spice_core::backend::BackendError;
use spice_core::imageops::ImageOpsError;
use spice_core::mask::MaskError;
use spice_core::model::ProjectError;
use spice_core::orchestrator::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    BackendUnavailable,
    Internal,
}

impl ErrorCode {
    fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::BackendUnavailable => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: false,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<ImageOpsError> for ApiError {
    fn from(e: ImageOpsError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Contract(_) | BackendError::EmptyInput => {
                ApiError::bad_request(e.to_string())
            }
            _ => ApiError {
                code: ErrorCode::BackendUnavailable,
                retryable: e.is_retryable(),
                message: e.to_string(),
            },
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend { source, stage } => {
                let mut err = ApiError::from(source);
                if err.code == ErrorCode::BadRequest {
                    // a contract violation surfacing from the backend is its fault, not the client's
                    err.code = ErrorCode::BackendUnavailable;
                }
                err.message = format!("{stage} stage: {}", err.message);
                err
            }
            PipelineError::Cancelled => ApiError::conflict("step cancelled"),
            PipelineError::Mask(MaskError::ImageOps(inner)) => ApiError::internal(inner.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}
