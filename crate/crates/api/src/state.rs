use std::path::Path;
use std::sync::Arc;

use axum::async_trait;
use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use lify_alerts::AlertEngine;
use lify_core::Clock;
use lify_gateway::{EventBus, TelemetryStore};
use lify_notifier::BindingRegistry;
use tokio::sync::watch;

use crate::auth::{LoginLimiter, Sessions};
use crate::error::ApiError;
use crate::patients::{PatientProfile, PatientStore};
use crate::users::{UserAccount, UserStore};

/// Everything a request handler can reach.
#[derive(Clone)]
pub struct AppState {
    pub users: Arc<UserStore>,
    pub patients: Arc<PatientStore>,
    pub sessions: Arc<Sessions>,
    pub limiter: Arc<LoginLimiter>,
    pub telemetry: Arc<dyn TelemetryStore>,
    pub engine: Arc<AlertEngine>,
    pub bus: EventBus,
    pub bindings: Arc<BindingRegistry>,
    pub clock: Arc<dyn Clock>,
    streams_stop: Arc<watch::Sender<bool>>,
}

impl AppState {
    /// Opens the user, patient and binding files under `data_root`, or keeps
    /// them in memory when there is none.
    pub fn open(
        data_root: Option<&Path>,
        telemetry: Arc<dyn TelemetryStore>,
        engine: Arc<AlertEngine>,
        bus: EventBus,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, crate::ServerError> {
        let file = |name: &str| data_root.map(|r| r.join("api").join(name));
        let users = UserStore::open(file("users.json")).map_err(crate::ServerError::Store)?;
        let patients = PatientStore::open(file("patients.json")).map_err(crate::ServerError::Store)?;
        let bindings = match data_root {
            Some(root) => BindingRegistry::open(root.join("notify").join("bindings.json"))?,
            None => BindingRegistry::in_memory(),
        };
        Ok(Self {
            users: Arc::new(users),
            patients: Arc::new(patients),
            sessions: Arc::new(Sessions::default()),
            limiter: Arc::new(LoginLimiter::default()),
            telemetry,
            engine,
            bus,
            bindings: Arc::new(bindings),
            clock,
            streams_stop: Arc::new(watch::channel(false).0),
        })
    }

    /// Ends every open event stream; they would otherwise hold the server
    /// open during graceful shutdown.
    pub fn stop_streams(&self) {
        self.streams_stop.send_replace(true);
    }

    pub(crate) fn stream_shutdown(&self) -> watch::Receiver<bool> {
        self.streams_stop.subscribe()
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn authenticate(&self, token: &str) -> Result<AuthUser, ApiError> {
        let user_id = self.sessions.resolve(token, self.now_ms()).ok_or_else(ApiError::unauthorized)?;
        let account = self.users.get(&user_id).ok_or_else(ApiError::unauthorized)?;
        Ok(AuthUser { account, token: token.to_string() })
    }

    /// A patient the caller may read. Unknown and soft-deleted patients are
    /// 404 for family; staff still reach deleted ones.
    pub fn readable_patient(&self, user: &UserAccount, patient_id: &str) -> Result<PatientProfile, ApiError> {
        let patient = self
            .patients
            .get(patient_id)
            .filter(|p| !p.deleted || user.role.is_caregiver())
            .ok_or_else(|| ApiError::not_found(format_args!("patient {patient_id}")))?;
        if !user.can_read_patient(patient_id) {
            return Err(ApiError::forbidden());
        }
        Ok(patient)
    }
}

/// The caller behind a valid bearer token.
#[derive(Debug, Clone)]
pub struct AuthUser {
    pub account: UserAccount,
    pub token: String,
}

impl AuthUser {
    pub fn require_caregiver(&self) -> Result<(), ApiError> {
        if self.account.role.is_caregiver() {
            Ok(())
        } else {
            Err(ApiError::forbidden())
        }
    }

    pub fn require_admin(&self) -> Result<(), ApiError> {
        if self.account.role == lify_core::Role::Admin {
            Ok(())
        } else {
            Err(ApiError::forbidden())
        }
    }
}

pub fn bearer_token(parts: &Parts) -> Option<&str> {
    let value = parts.headers.get(AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim()).filter(|t| !t.is_empty())
}

#[async_trait]
impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer_token(parts).ok_or_else(ApiError::unauthorized)?;
        state.authenticate(token)
    }
}

/// Same as [`AuthUser`] but absent when no token was sent.
pub struct MaybeAuthUser(pub Option<AuthUser>);

#[async_trait]
impl FromRequestParts<AppState> for MaybeAuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer_token(parts) {
            None => Ok(MaybeAuthUser(None)),
            Some(token) => state.authenticate(token).map(|u| MaybeAuthUser(Some(u))),
        }
    }
}
