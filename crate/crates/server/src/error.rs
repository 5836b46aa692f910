use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

/// An HTTP error carrying a machine-readable `kind`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn not_found(what: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, kind: "not_found", message: format!("unknown {}", what.into()) }
    }

    pub fn busy(session: &str) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            kind: "busy",
            message: format!("session {session} is processing another request"),
        }
    }

    pub fn forbidden(message: String) -> Self {
        Self { status: StatusCode::FORBIDDEN, kind: "forbidden", message }
    }

    pub fn internal(message: String) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, kind: "internal", message }
    }
}

impl From<isrf_core::Error> for ApiError {
    fn from(e: isrf_core::Error) -> Self {
        let status = match &e {
            isrf_core::Error::MissingFile(_) => StatusCode::NOT_FOUND,
            e if e.is_validation() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, kind: e.kind(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "kind": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}
