use std::collections::BTreeSet;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use lify_core::Role;
use serde::{Deserialize, Serialize};

use crate::auth::SessionToken;
use crate::error::ApiError;
use crate::state::{AppState, AuthUser, MaybeAuthUser};
use crate::users::{
    hash_password, normalize_email, verify_against_dummy, verify_password, PublicUser, UserAccount,
    MIN_PASSWORD_CHARS,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterRequest {
    pub email: String,
    pub password: String,
    #[serde(default = "family")]
    pub role: Role,
    pub display_name: String,
}

fn family() -> Role {
    Role::Family
}

pub async fn register(
    State(state): State<AppState>,
    MaybeAuthUser(caller): MaybeAuthUser,
    Json(req): Json<RegisterRequest>,
) -> Result<(StatusCode, Json<PublicUser>), ApiError> {
    let email = normalize_email(&req.email)?;
    let display_name = req.display_name.trim().to_string();
    if display_name.is_empty() || display_name.chars().count() > 100 {
        return Err(ApiError::validation("display_name must be 1-100 characters"));
    }
    if req.password.chars().count() < MIN_PASSWORD_CHARS {
        return Err(ApiError::validation(format!("password must be at least {MIN_PASSWORD_CHARS} characters"))
            .with_code("weak_password"));
    }
    let caller_is_admin = caller.as_ref().is_some_and(|c| c.account.role == Role::Admin);
    // Hashing is slow; do it before taking the store lock.
    let password_hash = {
        let password = req.password.clone();
        tokio::task::spawn_blocking(move || hash_password(&password))
            .await
            .map_err(|e| ApiError::internal("password hashing", e))??
    };
    let account = UserAccount {
        user_id: format!("u-{}", random_suffix()),
        email,
        display_name,
        role: req.role,
        password_hash,
        patient_links: BTreeSet::new(),
        notify_alerts: true,
        created_ts_ms: state.now_ms(),
    };
    let role = req.role;
    let created = state.users.insert_with(account, |users| {
        let bootstrap = users.is_empty();
        if role.is_caregiver() && !bootstrap && !caller_is_admin {
            return Err(ApiError::forbidden().with_message("only an admin can create staff or admin accounts"));
        }
        Ok(())
    })?;
    tracing::info!(user_id = %created.user_id, role = %created.role, "account registered");
    Ok((StatusCode::CREATED, Json(PublicUser::from(&created))))
}

#[derive(Debug, Deserialize)]
pub struct LoginRequest {
    pub email: String,
    pub password: String,
}

#[derive(Debug, Serialize)]
pub struct LoginResponse {
    #[serde(flatten)]
    pub session: SessionToken,
    pub user: PublicUser,
}

pub async fn login(State(state): State<AppState>, Json(req): Json<LoginRequest>) -> Result<Json<LoginResponse>, ApiError> {
    let email = req.email.trim().to_lowercase();
    let now = state.now_ms();
    if state.limiter.is_limited(&email, now) {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "rate_limited",
            "too many failed logins for this email; try again in a minute",
        ));
    }
    let account = state.users.by_email(&email);
    let password = req.password;
    let verified = tokio::task::spawn_blocking(move || match account {
        Some(a) if verify_password(&password, &a.password_hash) => Some(a),
        Some(_) => None,
        None => {
            verify_against_dummy(&password);
            None
        }
    })
    .await
    .map_err(|e| ApiError::internal("password check", e))?;
    let Some(account) = verified else {
        state.limiter.record_failure(&email, now);
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "bad_credentials", "email or password is incorrect"));
    };
    state.limiter.clear(&email);
    let session = state.sessions.issue(&account.user_id, state.now_ms());
    Ok(Json(LoginResponse { session, user: PublicUser::from(&account) }))
}

pub async fn logout(State(state): State<AppState>, user: AuthUser) -> StatusCode {
    state.sessions.revoke(&user.token);
    StatusCode::NO_CONTENT
}

pub async fn me(user: AuthUser) -> Json<PublicUser> {
    Json(PublicUser::from(&user.account))
}

pub async fn list_users(State(state): State<AppState>, user: AuthUser) -> Result<Json<Vec<PublicUser>>, ApiError> {
    user.require_admin()?;
    Ok(Json(state.users.list().iter().map(PublicUser::from).collect()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksRequest {
    pub patient_links: BTreeSet<String>,
}

pub async fn set_links(
    State(state): State<AppState>,
    user: AuthUser,
    Path(user_id): Path<String>,
    Json(req): Json<LinksRequest>,
) -> Result<Json<PublicUser>, ApiError> {
    user.require_admin()?;
    if let Some(p) = req.patient_links.iter().find(|p| state.patients.get(p).is_none()) {
        return Err(ApiError::not_found(format_args!("patient {p}")));
    }
    let updated = state.users.update(&user_id, |u| {
        u.patient_links = req.patient_links;
        Ok(())
    })?;
    Ok(Json(PublicUser::from(&updated)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotifyPreference {
    pub notify_alerts: bool,
}

pub async fn set_notify(
    State(state): State<AppState>,
    user: AuthUser,
    Json(req): Json<NotifyPreference>,
) -> Result<Json<PublicUser>, ApiError> {
    let updated = state.users.update(&user.account.user_id, |u| {
        u.notify_alerts = req.notify_alerts;
        Ok(())
    })?;
    Ok(Json(PublicUser::from(&updated)))
}

pub(crate) fn random_suffix() -> String {
    use rand::RngCore;
    let mut raw = [0u8; 6];
    rand::rngs::OsRng.fill_bytes(&mut raw);
    hex::encode(raw)
}
