//! The role matrix for every mutating endpoint, as data.

use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

use super::{Api, Cast};

/// Expected status per caller: admin, staff, family, no token.
pub struct Case {
    pub name: &'static str,
    pub expect: [u16; 4],
}

pub const CASES: &[Case] = &[
    Case { name: "POST /patients", expect: [201, 201, 403, 401] },
    Case { name: "PUT /patients/{id}", expect: [200, 200, 403, 401] },
    Case { name: "DELETE /patients/{id}", expect: [204, 204, 403, 401] },
    Case { name: "PUT /patients/{id}/rules", expect: [200, 200, 403, 401] },
    Case { name: "POST /alerts", expect: [201, 201, 403, 401] },
    Case { name: "POST /alerts/{id}/ack", expect: [200, 200, 403, 401] },
    Case { name: "POST /auth/register (staff)", expect: [201, 403, 403, 403] },
    Case { name: "PUT /users/{id}/links", expect: [200, 403, 403, 401] },
    Case { name: "PUT /users/me/notify", expect: [200, 200, 200, 401] },
    Case { name: "POST /notify/bind-code", expect: [201, 201, 201, 401] },
    Case { name: "POST /notify/bind", expect: [200, 200, 200, 401] },
    Case { name: "DELETE /notify/binding", expect: [204, 204, 204, 401] },
    Case { name: "POST /auth/logout", expect: [204, 204, 204, 401] },
];

pub struct Outcome {
    pub case: &'static str,
    pub caller: &'static str,
    pub expected: u16,
    pub got: u16,
}

/// Runs every case for every caller against `api`, which must be seeded
/// with `cast`. Each call gets its own fresh target where the operation
/// would otherwise change what the next caller sees.
pub async fn run(api: &Api, cast: &Cast) -> Vec<Outcome> {
    let mut out = Vec::new();
    for (i, case) in CASES.iter().enumerate() {
        let callers = [
            ("admin", Some(&cast.admin)),
            ("staff", Some(&cast.staff)),
            ("family", Some(&cast.family)),
            ("anonymous", None),
        ];
        for (j, (caller, member)) in callers.into_iter().enumerate() {
            let tag = format!("m{i}x{j}");
            // logout would revoke the shared session
            let token = match (member, case.name) {
                (Some(m), "POST /auth/logout") => Some(fresh_login(api, cast, m).await),
                (Some(m), _) => Some(m.token.clone()),
                (None, _) => None,
            };
            let (method, path, body) = prepare(api, cast, case.name, &tag, member.map(|m| m.user_id.as_str())).await;
            let (status, _) = api.call(method, &path, token.as_deref(), body).await;
            out.push(Outcome { case: case.name, caller, expected: case.expect[j], got: status.as_u16() });
        }
    }
    out
}

async fn fresh_login(api: &Api, cast: &Cast, member: &super::Member) -> String {
    let email = if member.user_id == cast.admin.user_id {
        "admin@care.test"
    } else if member.user_id == cast.staff.user_id {
        "nurse@care.test"
    } else {
        "son@home.test"
    };
    api.login(email).await
}

async fn new_patient(api: &Api, cast: &Cast, id: &str) {
    let body = json!({ "patient_id": id, "name": "Temp Patient", "birth_date": "1950-01-01" });
    let (s, b) = api.call(Method::POST, "/patients", Some(&cast.staff.token), Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{b}");
}

async fn prepare(
    api: &Api,
    cast: &Cast,
    case: &str,
    tag: &str,
    caller_id: Option<&str>,
) -> (Method, String, Option<Value>) {
    match case {
        "POST /patients" => (
            Method::POST,
            "/patients".into(),
            Some(json!({ "patient_id": tag, "name": "New Patient", "birth_date": "1939-09-01" })),
        ),
        "PUT /patients/{id}" => (Method::PUT, "/patients/p1".into(), Some(json!({ "notes": format!("visit {tag}") }))),
        "DELETE /patients/{id}" => {
            new_patient(api, cast, tag).await;
            (Method::DELETE, format!("/patients/{tag}"), None)
        }
        "PUT /patients/{id}/rules" => (
            Method::PUT,
            "/patients/p1/rules".into(),
            Some(json!([{ "metric": "temp_c", "min": 35.5, "max": 38.0 }])),
        ),
        "POST /alerts" => (
            Method::POST,
            "/alerts".into(),
            Some(json!({ "patient_id": "p1", "message": format!("check on patient ({tag})"), "severity": "warning" })),
        ),
        "POST /alerts/{id}/ack" => {
            let body = json!({ "patient_id": "p1", "message": format!("needs help ({tag})") });
            let (s, alert) = api.call(Method::POST, "/alerts", Some(&cast.staff.token), Some(body)).await;
            assert_eq!(s, StatusCode::CREATED, "{alert}");
            (Method::POST, format!("/alerts/{}/ack", alert["alert_id"].as_str().unwrap()), None)
        }
        "POST /auth/register (staff)" => (
            Method::POST,
            "/auth/register".into(),
            Some(json!({ "email": format!("{tag}@care.test"), "password": super::PASSWORD, "role": "staff", "display_name": tag })),
        ),
        "PUT /users/{id}/links" => (
            Method::PUT,
            format!("/users/{}/links", cast.family.user_id),
            Some(json!({ "patient_links": ["p1"] })),
        ),
        "PUT /users/me/notify" => (Method::PUT, "/users/me/notify".into(), Some(json!({ "notify_alerts": true }))),
        "POST /notify/bind-code" => (Method::POST, "/notify/bind-code".into(), None),
        "POST /notify/bind" => {
            // a code issued to the caller, or to nobody for the anonymous call
            let now = api.state.now_ms();
            let code = api.state.bindings.issue_code(caller_id.unwrap_or("nobody"), now);
            (Method::POST, "/notify/bind".into(), Some(json!({ "chat_id": format!("chat-{tag}"), "code": code.code })))
        }
        "DELETE /notify/binding" => (Method::DELETE, "/notify/binding".into(), None),
        "POST /auth/logout" => (Method::POST, "/auth/logout".into(), None),
        other => panic!("no preparation for {other}"),
    }
}
