use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use factorlens_core::Error;
use serde::Serialize;

/// JSON error body shared by every endpoint.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_residual: Option<f64>,
    /// Version the server currently holds, on conflicts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_version: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
                best_residual: None,
                current_version: None,
            },
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(message: impl Into<String>, current_version: Option<String>) -> Self {
        let mut e = Self::new(StatusCode::CONFLICT, "stale_version", message);
        e.body.current_version = current_version;
        e
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, "backend_failure", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::NotFound(_) => Self::not_found(message),
            Error::Backend(_) | Error::Protocol { .. } => Self::backend(message),
            Error::NonConvergence { best_residual, .. } => {
                let mut api = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "non_convergence", message);
                api.body.best_residual = Some(best_residual);
                api
            }
            Error::Infeasible(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "infeasible", message),
            Error::Lineage(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "lineage", message),
            Error::Dimension { .. } | Error::Config(_) | Error::Validation(_) => Self::invalid(message),
            Error::Numerical { .. }
            | Error::Elicitation(_)
            | Error::HashMismatch { .. }
            | Error::UnknownVersion { .. }
            | Error::Storage(_)
            | Error::Serde(_) => Self::internal(message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::invalid(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
