mod support;

use std::time::{Duration, Instant};

use lify_core::{MetricKind, Quality, TelemetryEnvelope};
use lify_notifier::ScriptedReply;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use support::Api;

const T0: i64 = 1_700_000_000_000;

fn publish(api: &Api, device: &str, patient: &str, ts_ms: i64, temp: f64) {
    let mut env = TelemetryEnvelope::new(device, patient, ts_ms);
    env.insert(MetricKind::TempC, temp, Quality::Ok);
    api.gateway.on_message(&format!("lify/v1/telemetry/{device}"), &env.to_json());
}

async fn bind_chat(api: &Api, token: &str, chat: &str) {
    let (s, code) = api.call(Method::POST, "/notify/bind-code", Some(token), None).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(code["code"].as_str().unwrap().len(), 8);
    let body = json!({ "chat_id": chat, "code": code["code"].as_str().unwrap().to_lowercase() });
    let (s, binding) = api.call(Method::POST, "/notify/bind", Some(token), Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{binding}");
    assert_eq!(binding["verified"], true);
}

async fn wait_for_messages(api: &Api, n: usize) -> Vec<lify_notifier::SentMessage> {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let sent = api.transport.sent();
        if sent.len() >= n || Instant::now() > deadline {
            return sent;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test]
async fn manual_alert_is_created_and_notified() {
    let api = Api::start().await;
    let cast = api.seed().await;
    bind_chat(&api, &cast.family.token, "chat-family").await;
    bind_chat(&api, &cast.staff.token, "chat-staff").await;

    let body = json!({ "patient_id": "p1", "message": "  patient fell  ", "severity": "critical" });
    let (s, alert) = api.call(Method::POST, "/alerts", Some(&cast.staff.token), Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{alert}");
    assert_eq!(alert["message"], "patient fell");
    assert_eq!(alert["source"], json!({ "kind": "manual", "user_id": cast.staff.user_id }));
    assert_eq!(alert["state"], json!({ "status": "open" }));

    let mut sent = wait_for_messages(&api, 2).await;
    sent.sort_by(|a, b| a.chat_id.cmp(&b.chat_id));
    let chats: Vec<&str> = sent.iter().map(|m| m.chat_id.as_str()).collect();
    assert_eq!(chats, ["chat-family", "chat-staff"]);
    assert_eq!(sent[0].text, "[CRITICAL] Patient P.: patient fell — raised by nurse");

    let (s, b) = api
        .call(Method::POST, "/alerts", Some(&cast.staff.token), Some(json!({ "patient_id": "p1", "message": "x", "severity": "info" })))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{b}");
    let (s, _) = api
        .call(Method::POST, "/alerts", Some(&cast.staff.token), Some(json!({ "patient_id": "nope", "message": "x" })))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn acknowledgement_is_once_only_and_family_cannot_ack() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let (_, alert) = api
        .call(Method::POST, "/alerts", Some(&cast.staff.token), Some(json!({ "patient_id": "p1", "message": "call the doctor" })))
        .await;
    let path = format!("/alerts/{}/ack", alert["alert_id"].as_str().unwrap());
    assert_eq!(api.call(Method::POST, &path, Some(&cast.family.token), None).await.0, StatusCode::FORBIDDEN);
    let (s, acked) = api.call(Method::POST, &path, Some(&cast.admin.token), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(acked["state"]["status"], "acked");
    assert_eq!(acked["state"]["user_id"], cast.admin.user_id);
    let (s, b) = api.call(Method::POST, &path, Some(&cast.staff.token), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["error"]["code"], "already_acked");
    assert_eq!(api.call(Method::POST, "/alerts/a-404/ack", Some(&cast.staff.token), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn family_lists_alerts_of_linked_patients_only() {
    let api = Api::start().await;
    let cast = api.seed().await;
    for p in ["p1", "p2", "p1"] {
        let body = json!({ "patient_id": p, "message": format!("check {p}") });
        api.call(Method::POST, "/alerts", Some(&cast.staff.token), Some(body)).await;
    }
    let (_, all) = api.call(Method::GET, "/alerts", Some(&cast.staff.token), None).await;
    assert_eq!(all.as_array().unwrap().len(), 3);
    let (_, mine) = api.call(Method::GET, "/alerts", Some(&cast.family.token), None).await;
    let patients: Vec<&str> = mine.as_array().unwrap().iter().map(|a| a["patient_id"].as_str().unwrap()).collect();
    assert_eq!(patients, ["p1", "p1"]);
    // newest first
    let ids: Vec<&str> = all.as_array().unwrap().iter().map(|a| a["alert_id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(ids, sorted);
    let (_, open) = api.call(Method::GET, "/alerts?state=acked", Some(&cast.staff.token), None).await;
    assert_eq!(open, json!([]));
}

#[tokio::test]
async fn stream_delivers_samples_within_a_second() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let mut stream = api.open_stream(&cast.family.token, "", None).await;
    // unlinked patient first; must not appear
    publish(&api, "dev-2", "p2", T0, 36.5);
    let published = Instant::now();
    publish(&api, "dev-1", "p1", T0, 36.7);
    let event = stream.next_within(Duration::from_secs(1)).await.expect("sample within 1 s");
    let latency = published.elapsed();
    assert!(latency < Duration::from_secs(1), "{latency:?}");
    assert_eq!(event.name, "sample");
    let data: Value = serde_json::from_str(&event.data).unwrap();
    assert_eq!(data["patient_id"], "p1");
    assert_eq!(data["metric"], "temp_c");
    assert_eq!(data["value"], 36.7);
    assert_eq!(data["quality"], "ok");
    assert_eq!(data["ts_ms"], T0);
}

#[tokio::test]
async fn automatic_alert_reaches_stream_and_chat() {
    let api = Api::start().await;
    let cast = api.seed().await;
    bind_chat(&api, &cast.family.token, "chat-family").await;
    api.transport.script("chat-family", [ScriptedReply::Status(500)]);
    let mut stream = api.open_stream(&cast.staff.token, "?patient_id=p1", None).await;
    for i in 0..3 {
        publish(&api, "dev-1", "p1", T0 + i * 1000, 39.4);
    }
    let mut alert = None;
    while let Some(e) = stream.next_within(Duration::from_secs(2)).await {
        if e.name == "alert" {
            alert = Some(serde_json::from_str::<Value>(&e.data).unwrap());
            break;
        }
    }
    let alert = alert.expect("alert event");
    assert_eq!(alert["metric"], "temp_c");
    assert_eq!(alert["created_ts_ms"], T0 + 2000);
    assert_eq!(alert["source"]["kind"], "auto");

    // one 500 then success after the first backoff step
    let deadline = Instant::now() + Duration::from_secs(5);
    while api.transport.attempts_to("chat-family") < 2 && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let sent = api.transport.sent();
    assert_eq!(sent.len(), 2);
    assert_eq!(sent[1].text, "[WARNING] Patient P.: temperature = 39.4 °C (range 35.0–38.0)");
}

#[tokio::test]
async fn reconnect_resumes_after_last_event_id() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let mut first = api.open_stream(&cast.staff.token, "", None).await;
    publish(&api, "dev-1", "p1", T0, 36.1);
    let seen = first.next_within(Duration::from_secs(1)).await.unwrap();
    drop(first);
    let last: u64 = seen.id.unwrap().parse().unwrap();
    publish(&api, "dev-1", "p1", T0 + 1000, 36.2);
    publish(&api, "dev-1", "p1", T0 + 2000, 36.3);
    let mut second = api.open_stream(&cast.staff.token, "", Some(last)).await;
    let mut values = Vec::new();
    for _ in 0..2 {
        let e = second.next_within(Duration::from_secs(1)).await.unwrap();
        assert_eq!(e.name, "sample");
        assert!(e.id.unwrap().parse::<u64>().unwrap() > last);
        values.push(serde_json::from_str::<Value>(&e.data).unwrap()["value"].as_f64().unwrap());
    }
    assert_eq!(values, [36.2, 36.3]);
}

#[tokio::test]
async fn resume_beyond_the_replay_window_signals_a_gap() {
    let api = Api::start().await;
    let cast = api.seed().await;
    for i in 0..1100 {
        publish(&api, "dev-1", "p1", T0 + i * 1000, 36.5);
    }
    let mut stream = api.open_stream(&cast.staff.token, "", Some(1)).await;
    let first = stream.next_within(Duration::from_secs(1)).await.unwrap();
    assert_eq!(first.name, "gap");
    let missed = serde_json::from_str::<Value>(&first.data).unwrap()["missed"].as_u64().unwrap();
    assert!(missed > 0);
    assert_eq!(stream.next_within(Duration::from_secs(1)).await.unwrap().name, "sample");
}

#[tokio::test]
async fn shutdown_closes_open_streams() {
    let api = Api::start().await;
    let cast = api.seed().await;
    let mut stream = api.open_stream(&cast.staff.token, "", None).await;
    api.stop().await;
    assert_eq!(stream.next_within(Duration::from_secs(2)).await, None);
}
