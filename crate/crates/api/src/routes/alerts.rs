use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use lify_alerts::{AlertFilter, StateFilter};
use lify_core::{Alert, Severity};
use serde::Deserialize;

use crate::error::ApiError;
use crate::state::{AppState, AuthUser};

#[derive(Debug, Default, Deserialize)]
pub struct ListParams {
    pub state: Option<StateFilter>,
    pub patient_id: Option<String>,
    pub since: Option<i64>,
}

/// Newest first. Family callers only ever see linked patients.
pub async fn list(
    State(state): State<AppState>,
    user: AuthUser,
    Query(params): Query<ListParams>,
) -> Result<Json<Vec<Alert>>, ApiError> {
    if let Some(p) = &params.patient_id {
        state.readable_patient(&user.account, p)?;
    }
    let filter = AlertFilter { state: params.state, patient_id: params.patient_id, since_ms: params.since };
    let alerts = state
        .engine
        .list_alerts(&filter)
        .into_iter()
        .filter(|a| user.account.can_read_patient(&a.patient_id))
        .collect();
    Ok(Json(alerts))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualAlert {
    pub patient_id: String,
    pub message: String,
    #[serde(default = "warning")]
    pub severity: Severity,
}

fn warning() -> Severity {
    Severity::Warning
}

pub async fn raise(
    State(state): State<AppState>,
    user: AuthUser,
    Json(req): Json<ManualAlert>,
) -> Result<(StatusCode, Json<Alert>), ApiError> {
    user.require_caregiver()?;
    let patient = state.readable_patient(&user.account, &req.patient_id)?;
    if patient.deleted {
        return Err(ApiError::not_found(format_args!("patient {}", req.patient_id)));
    }
    let alert = state.engine.trigger_manual(&user.account.principal(), &req.patient_id, &req.message, req.severity)?;
    Ok((StatusCode::CREATED, Json(alert)))
}

pub async fn ack(
    State(state): State<AppState>,
    user: AuthUser,
    Path(alert_id): Path<String>,
) -> Result<Json<Alert>, ApiError> {
    user.require_caregiver()?;
    Ok(Json(state.engine.acknowledge(&user.account.principal(), &alert_id)?))
}
