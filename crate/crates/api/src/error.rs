use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use lify_alerts::AlertError;
use lify_gateway::QueryError;
use lify_notifier::BindError;
use serde_json::json;
use tracing::error;

/// An HTTP error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation_error", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing, invalid or expired bearer token")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "your role does not allow this")
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(context: &str, err: impl std::fmt::Display) -> Self {
        error!(%context, error = %err, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("{context} failed"))
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<AlertError> for ApiError {
    fn from(e: AlertError) -> Self {
        match e {
            AlertError::Validation(m) => ApiError::validation(m),
            AlertError::MetricMismatch { .. } => ApiError::validation(e.to_string()),
            AlertError::Forbidden => ApiError::forbidden(),
            AlertError::NotFound(id) => ApiError::not_found(format_args!("alert {id}")),
            AlertError::AlreadyAcked(_) => ApiError::conflict("already_acked", e.to_string()),
            AlertError::Storage { .. } | AlertError::Corrupt { .. } => ApiError::internal("alert storage", e),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl From<BindError> for ApiError {
    fn from(e: BindError) -> Self {
        match e {
            BindError::BadCode => ApiError::validation("verification code does not match").with_code("bad_code"),
            BindError::Expired => ApiError::validation("verification code expired").with_code("expired"),
            BindError::EmptyChatId => ApiError::validation("chat_id must not be empty"),
            BindError::Storage { .. } => ApiError::internal("binding storage", e),
        }
    }
}

impl ApiError {
    pub fn with_code(mut self, code: &'static str) -> Self {
        self.code = code;
        self
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = message.into();
        self
    }
}
