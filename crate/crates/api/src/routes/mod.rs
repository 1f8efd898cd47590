//! Handlers for `/api/v1`.

mod accounts;
mod alerts;
mod notify;
mod patients;

use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::state::AppState;
use crate::stream::stream;

pub fn api_router() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/auth/register", post(accounts::register))
        .route("/auth/login", post(accounts::login))
        .route("/auth/logout", post(accounts::logout))
        .route("/auth/me", get(accounts::me))
        .route("/users", get(accounts::list_users))
        .route("/users/me/notify", put(accounts::set_notify))
        .route("/users/:user_id/links", put(accounts::set_links))
        .route("/patients", get(patients::list).post(patients::create))
        .route(
            "/patients/:patient_id",
            get(patients::read).put(patients::update).delete(patients::remove),
        )
        .route("/patients/:patient_id/telemetry", get(patients::telemetry))
        .route("/patients/:patient_id/latest", get(patients::latest))
        .route("/patients/:patient_id/rules", get(patients::rules).put(patients::put_rules))
        .route("/alerts", get(alerts::list).post(alerts::raise))
        .route("/alerts/:alert_id/ack", post(alerts::ack))
        .route("/notify/bind-code", post(notify::bind_code))
        .route("/notify/bind", post(notify::bind))
        .route("/notify/binding", get(notify::binding).delete(notify::unbind))
        .route("/stream", get(stream))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}
