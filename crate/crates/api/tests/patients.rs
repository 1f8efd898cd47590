mod support;

use lify_core::{MetricKind, Quality, TelemetryEnvelope};
use lify_gateway::IngestOutcome;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use support::Api;

const T0: i64 = 1_700_000_000_000;

fn ingest(api: &Api, device: &str, patient: &str, ts_ms: i64, hr: f64) {
    let mut env = TelemetryEnvelope::new(device, patient, ts_ms);
    env.insert(MetricKind::HrBpm, hr, Quality::Ok);
    env.insert(MetricKind::TempC, 36.6, Quality::Ok);
    let outcome = api.gateway.on_message(&format!("lify/v1/telemetry/{device}"), &env.to_json());
    assert!(matches!(outcome, IngestOutcome::Accepted { .. }), "{outcome:?}");
}

#[tokio::test]
async fn profile_round_trip_and_validation() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let staff = Some(cast.staff.token.as_str());
    let body = json!({
        "name": "Rosa Gómez",
        "birth_date": "1936-03-08",
        "pre_existing_conditions": ["hypertension", "type 2 diabetes"],
        "daily_medication": [{ "name": "metformin", "dose": "500 mg", "schedule": "twice daily" }],
        "device_ids": ["dev-9"],
        "notes": "prefers morning visits"
    });
    let (s, created) = api.call(Method::POST, "/patients", staff, Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{created}");
    let id = created["patient_id"].as_str().unwrap();
    assert!(id.starts_with("p-"));
    let (_, read) = api.call(Method::GET, &format!("/patients/{id}"), staff, None).await;
    assert_eq!(read, created);
    assert_eq!(read["daily_medication"][0]["dose"], "500 mg");

    // defaults are installed on create
    let (_, rules) = api.call(Method::GET, &format!("/patients/{id}/rules"), staff, None).await;
    assert_eq!(rules.as_array().unwrap().len(), 3);

    let (s, b) = api
        .call(Method::POST, "/patients", staff, Some(json!({ "name": "Baby", "birth_date": "2999-01-01" })))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["code"], "validation_error");
    let (s, _) = api
        .call(Method::POST, "/patients", staff, Some(json!({ "patient_id": "p1", "name": "Dup", "birth_date": "1940-01-01" })))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, b) = api
        .call(Method::PUT, &format!("/patients/{id}"), staff, Some(json!({ "device_ids": ["dev-1"] })))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["error"]["code"], "device_bound");
    let (s, updated) = api
        .call(Method::PUT, &format!("/patients/{id}"), staff, Some(json!({ "notes": "moved to room 4" })))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(updated["notes"], "moved to room 4");
    assert_eq!(updated["device_ids"], json!(["dev-9"]));
}

#[tokio::test]
async fn telemetry_distinguishes_unknown_patient_from_empty_series() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let staff = Some(cast.staff.token.as_str());
    let (s, series) = api.call(Method::GET, "/patients/p2/telemetry?metric=hr_bpm&from=0&to=10", staff, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(series["points"], json!([]));
    let (s, _) = api.call(Method::GET, "/patients/p9/telemetry?metric=hr_bpm&from=0&to=10", staff, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, b) = api.call(Method::GET, "/patients/p1/telemetry?metric=hr_bpm&from=10&to=0", staff, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{b}");
    let (s, _) = api.call(Method::GET, "/patients/p1/telemetry?metric=bp&from=0&to=10", staff, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api
        .call(Method::GET, "/patients/p1/telemetry?metric=hr_bpm&from=0&to=10&max_points=0", staff, None)
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn telemetry_and_latest_serve_ingested_samples() {
    let api = Api::start().await;
    let cast = api.seed().await;
    for i in 0..10 {
        ingest(&api, "dev-1", "p1", T0 + i * 1000, 70.0 + i as f64);
    }
    let family = Some(cast.family.token.as_str());
    let path = format!("/patients/p1/telemetry?metric=hr_bpm&from={T0}&to={}", T0 + 10_000);
    let (s, series) = api.call(Method::GET, &path, family, None).await;
    assert_eq!(s, StatusCode::OK);
    let points = series["points"].as_array().unwrap();
    assert_eq!(points.len(), 10);
    assert_eq!(points[3], json!({ "patient_id": "p1", "metric": "hr_bpm", "ts_ms": T0 + 3000, "value": 73.0, "quality": "ok", "device_id": "dev-1" }));

    let (_, reduced) = api.call(Method::GET, &format!("{path}&max_points=2"), family, None).await;
    let values: Vec<f64> = reduced["points"].as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect();
    assert_eq!(values, [72.0, 77.0]);

    let (_, latest) = api.call(Method::GET, "/patients/p1/latest", family, None).await;
    assert_eq!(latest["values"]["hr_bpm"], json!({ "value": 79.0, "quality": "ok", "ts_ms": T0 + 9000 }));
    assert_eq!(latest["values"]["temp_c"]["value"], 36.6);
    assert!(latest["values"].get("spo2_pct").is_none());
}

#[tokio::test]
async fn soft_delete_hides_from_family_but_keeps_history_for_staff() {
    let api = Api::start().await;
    let cast = api.seed().await;
    ingest(&api, "dev-1", "p1", T0, 80.0);
    let (s, _) = api.call(Method::DELETE, "/patients/p1", Some(&cast.staff.token), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);

    let ids = |v: &Value| -> Vec<String> {
        v.as_array().unwrap().iter().map(|p| p["patient_id"].as_str().unwrap().to_string()).collect()
    };
    let (_, family_list) = api.call(Method::GET, "/patients", Some(&cast.family.token), None).await;
    assert!(ids(&family_list).is_empty());
    let (s, _) = api.call(Method::GET, "/patients/p1", Some(&cast.family.token), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, staff_list) = api.call(Method::GET, "/patients", Some(&cast.staff.token), None).await;
    assert_eq!(ids(&staff_list), ["p2"]);
    let (_, with_deleted) = api.call(Method::GET, "/patients?include_deleted=true", Some(&cast.staff.token), None).await;
    assert_eq!(ids(&with_deleted), ["p1", "p2"]);
    let path = format!("/patients/p1/telemetry?metric=hr_bpm&from={T0}&to={}", T0 + 1);
    let (s, series) = api.call(Method::GET, &path, Some(&cast.staff.token), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(series["points"][0]["value"], 80.0);

    // the device is free for another patient
    let (s, _) = api
        .call(Method::PUT, "/patients/p2", Some(&cast.staff.token), Some(json!({ "device_ids": ["dev-1", "dev-2"] })))
        .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn rule_edits_validate_and_replace() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let staff = Some(cast.staff.token.as_str());
    let (s, b) = api
        .call(Method::PUT, "/patients/p1/rules", staff, Some(json!([{ "metric": "temp_c", "min": 40, "max": 38 }])))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["code"], "validation_error");
    let (s, rules) = api
        .call(
            Method::PUT,
            "/patients/p1/rules",
            staff,
            Some(json!([{ "metric": "hr_bpm", "min": 45, "max": 120, "debounce_n": 2, "severity": "critical" }])),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let hr = rules.as_array().unwrap().iter().find(|r| r["metric"] == "hr_bpm").unwrap();
    assert_eq!(hr["min"], 45.0);
    assert_eq!(hr["debounce_n"], 2);
    assert_eq!(hr["rearm_m"], 5);
    assert_eq!(hr["severity"], "critical");
    assert_eq!(rules.as_array().unwrap().len(), 3);
}
