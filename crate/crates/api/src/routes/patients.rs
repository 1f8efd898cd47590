use std::collections::BTreeMap;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use chrono::{DateTime, Utc};
use lify_alerts::AlertRule;
use lify_core::{MetricKind, Severity};
use lify_gateway::{latest as latest_values, query_range, LatestValue, SeriesKey, StoredRecord};
use serde::{Deserialize, Serialize};

use super::accounts::random_suffix;
use crate::error::ApiError;
use crate::patients::{PatientInput, PatientProfile};
use crate::state::{AppState, AuthUser};

pub const DEFAULT_MAX_POINTS: usize = 1_000;
pub const DEFAULT_WINDOW_MS: i64 = 60 * 60 * 1000;

fn today(state: &AppState) -> chrono::NaiveDate {
    DateTime::<Utc>::from_timestamp_millis(state.now_ms()).unwrap_or_default().date_naive()
}

#[derive(Debug, Default, Deserialize)]
pub struct ListParams {
    #[serde(default)]
    pub include_deleted: bool,
}

pub async fn list(
    State(state): State<AppState>,
    user: AuthUser,
    Query(params): Query<ListParams>,
) -> Json<Vec<PatientProfile>> {
    let staff = user.account.role.is_caregiver();
    let visible = state
        .patients
        .list()
        .into_iter()
        .filter(|p| user.account.can_read_patient(&p.patient_id))
        .filter(|p| !p.deleted || (staff && params.include_deleted))
        .collect();
    Json(visible)
}

pub async fn create(
    State(state): State<AppState>,
    user: AuthUser,
    Json(input): Json<PatientInput>,
) -> Result<(StatusCode, Json<PatientProfile>), ApiError> {
    user.require_caregiver()?;
    let mut profile = PatientProfile {
        patient_id: input.patient_id.clone().unwrap_or_else(|| format!("p-{}", random_suffix())),
        name: String::new(),
        birth_date: String::new(),
        pre_existing_conditions: vec![],
        daily_medication: vec![],
        device_ids: vec![],
        notes: String::new(),
        deleted: false,
    };
    profile.apply(input);
    profile.validate(today(&state))?;
    let created = state.patients.create(profile)?;
    state.engine.rules().ensure_defaults(&created.patient_id)?;
    tracing::info!(patient_id = %created.patient_id, user_id = %user.account.user_id, "patient created");
    Ok((StatusCode::CREATED, Json(created)))
}

pub async fn read(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
) -> Result<Json<PatientProfile>, ApiError> {
    Ok(Json(state.readable_patient(&user.account, &patient_id)?))
}

pub async fn update(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
    Json(input): Json<PatientInput>,
) -> Result<Json<PatientProfile>, ApiError> {
    user.require_caregiver()?;
    if input.patient_id.as_ref().is_some_and(|id| *id != patient_id) {
        return Err(ApiError::validation("patient_id cannot be changed"));
    }
    let today = today(&state);
    let updated = state.patients.update(&patient_id, |p| {
        p.apply(input);
        p.validate(today)
    })?;
    Ok(Json(updated))
}

pub async fn remove(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
) -> Result<StatusCode, ApiError> {
    user.require_caregiver()?;
    state.patients.update(&patient_id, |p| {
        p.deleted = true;
        Ok(())
    })?;
    tracing::info!(%patient_id, user_id = %user.account.user_id, "patient deleted");
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
pub struct TelemetryParams {
    pub metric: String,
    pub from: Option<i64>,
    pub to: Option<i64>,
    pub max_points: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub patient_id: String,
    pub metric: MetricKind,
    pub from_ms: i64,
    pub to_ms: i64,
    pub points: Vec<StoredRecord>,
}

pub async fn telemetry(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
    Query(params): Query<TelemetryParams>,
) -> Result<Json<Series>, ApiError> {
    state.readable_patient(&user.account, &patient_id)?;
    let metric = MetricKind::from_code(&params.metric)
        .ok_or_else(|| ApiError::validation(format!("unknown metric {:?}", params.metric)))?;
    let to_ms = params.to.unwrap_or_else(|| state.now_ms() + 1);
    let from_ms = params.from.unwrap_or(to_ms.saturating_sub(DEFAULT_WINDOW_MS));
    let points = query_range(
        state.telemetry.as_ref(),
        &SeriesKey::new(patient_id.clone(), metric),
        from_ms,
        to_ms,
        params.max_points.unwrap_or(DEFAULT_MAX_POINTS),
    )?;
    Ok(Json(Series { patient_id, metric, from_ms, to_ms, points }))
}

#[derive(Debug, Serialize)]
pub struct LatestSnapshot {
    pub patient_id: String,
    pub values: BTreeMap<MetricKind, LatestValue>,
}

pub async fn latest(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
) -> Result<Json<LatestSnapshot>, ApiError> {
    state.readable_patient(&user.account, &patient_id)?;
    let values = latest_values(state.telemetry.as_ref(), &patient_id);
    Ok(Json(LatestSnapshot { patient_id, values }))
}

pub async fn rules(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
) -> Result<Json<Vec<AlertRule>>, ApiError> {
    state.readable_patient(&user.account, &patient_id)?;
    Ok(Json(state.engine.rules().for_patient(&patient_id)))
}

/// A rule as edited by clients; omitted fields take the usual defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleInput {
    pub metric: MetricKind,
    pub min: f64,
    pub max: f64,
    pub debounce_n: Option<u32>,
    pub rearm_m: Option<u32>,
    pub severity: Option<Severity>,
    pub enabled: Option<bool>,
}

impl RuleInput {
    fn into_rule(self, patient_id: &str) -> AlertRule {
        let mut rule = AlertRule::new(patient_id, self.metric, self.min, self.max);
        if let Some(n) = self.debounce_n {
            rule.debounce_n = n;
        }
        if let Some(m) = self.rearm_m {
            rule.rearm_m = m;
        }
        if let Some(s) = self.severity {
            rule.severity = s;
        }
        if let Some(e) = self.enabled {
            rule.enabled = e;
        }
        rule
    }
}

pub async fn put_rules(
    State(state): State<AppState>,
    user: AuthUser,
    Path(patient_id): Path<String>,
    Json(inputs): Json<Vec<RuleInput>>,
) -> Result<Json<Vec<AlertRule>>, ApiError> {
    user.require_caregiver()?;
    state.readable_patient(&user.account, &patient_id)?;
    let rules = inputs.into_iter().map(|r| r.into_rule(&patient_id)).collect();
    state.engine.put_rules(&patient_id, rules)?;
    Ok(Json(state.engine.rules().for_patient(&patient_id)))
}
