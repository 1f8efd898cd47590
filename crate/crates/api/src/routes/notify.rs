use axum::extract::State;
use axum::http::StatusCode;
use axum::Json;
use lify_notifier::{BindCode, ChatBinding};
use serde::Deserialize;

use crate::error::ApiError;
use crate::state::{AppState, AuthUser};

/// Issues a one-time code the caller confirms from their chat.
pub async fn bind_code(State(state): State<AppState>, user: AuthUser) -> (StatusCode, Json<BindCode>) {
    let code = state.bindings.issue_code(&user.account.user_id, state.now_ms());
    (StatusCode::CREATED, Json(code))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindRequest {
    pub chat_id: String,
    pub code: String,
}

pub async fn bind(
    State(state): State<AppState>,
    user: AuthUser,
    Json(req): Json<BindRequest>,
) -> Result<Json<ChatBinding>, ApiError> {
    Ok(Json(state.bindings.bind(&user.account.user_id, &req.chat_id, &req.code, state.now_ms())?))
}

pub async fn binding(State(state): State<AppState>, user: AuthUser) -> Result<Json<ChatBinding>, ApiError> {
    state
        .bindings
        .binding_for(&user.account.user_id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("chat binding"))
}

pub async fn unbind(State(state): State<AppState>, user: AuthUser) -> Result<StatusCode, ApiError> {
    state.bindings.remove(&user.account.user_id)?;
    Ok(StatusCode::NO_CONTENT)
}
