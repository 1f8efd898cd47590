//! Demo data, loaded through the public API so a running server sees it
//! at once.

use std::path::Path;
use std::time::Duration;

use rand::distributions::{Alphanumeric, DistString};
use reqwest::{Method, StatusCode};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const DEMO_ADMIN_EMAIL: &str = "admin@lify.demo";

struct DemoUser {
    email: &'static str,
    name: &'static str,
    role: &'static str,
    links: &'static [&'static str],
}

const USERS: &[DemoUser] = &[
    DemoUser { email: "staff1@lify.demo", name: "Nurse Joy", role: "staff", links: &[] },
    DemoUser { email: "staff2@lify.demo", name: "Dr. Rivera", role: "staff", links: &[] },
    DemoUser { email: "family1@lify.demo", name: "Lucia Pérez", role: "family", links: &["p-001"] },
    DemoUser { email: "family2@lify.demo", name: "Tomás Gómez", role: "family", links: &["p-002", "p-003"] },
];

fn demo_patients() -> [Value; 3] {
    [
        json!({
            "patient_id": "p-001", "name": "Ana Pérez", "birth_date": "1938-04-12",
            "pre_existing_conditions": ["hypertension"],
            "daily_medication": [{ "name": "enalapril", "dose": "10 mg", "schedule": "every morning" }],
            "device_ids": ["dev-01"], "notes": "room 101"
        }),
        json!({
            "patient_id": "p-002", "name": "José Gómez", "birth_date": "1941-11-30",
            "pre_existing_conditions": ["type 2 diabetes", "COPD"],
            "daily_medication": [
                { "name": "metformin", "dose": "850 mg", "schedule": "with breakfast and dinner" },
                { "name": "salbutamol", "dose": "2 puffs", "schedule": "as needed" }
            ],
            "device_ids": ["dev-02"], "notes": "room 102"
        }),
        json!({
            "patient_id": "p-003", "name": "Carmen Ruiz", "birth_date": "1935-07-02",
            "pre_existing_conditions": ["atrial fibrillation"],
            "daily_medication": [{ "name": "apixaban", "dose": "5 mg", "schedule": "twice daily" }],
            "device_ids": ["dev-03"], "notes": "room 103"
        }),
    ]
}

#[derive(Debug, Clone)]
pub struct SeedOptions {
    /// Base URL of the API, e.g. `http://127.0.0.1:8080`.
    pub api_url: String,
    /// Extra CA for an HTTPS API with a private certificate.
    pub ca_path: Option<std::path::PathBuf>,
    pub admin_email: String,
    /// Needed when the admin already exists.
    pub admin_password: Option<String>,
}

/// A credential created by this run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Credential {
    pub email: String,
    pub password: String,
    pub role: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SeedReport {
    pub created_users: Vec<Credential>,
    pub created_patients: Vec<String>,
    pub updated_patients: Vec<String>,
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Result<(StatusCode, Value), CliError> {
        let mut req = self.http.request(method.clone(), format!("{}/api/v1{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| CliError::runtime(format!("{method} {path}: {}", e.without_url())))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| CliError::runtime(format!("{method} {path}: {e}")))?;
        let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
        Ok((status, value))
    }

    async fn expect(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>, ok: &[StatusCode]) -> Result<Value, CliError> {
        let (status, value) = self.call(method.clone(), path, token, body).await?;
        if ok.contains(&status) {
            Ok(value)
        } else {
            Err(CliError::runtime(format!("{method} {path} answered {status}: {value}")))
        }
    }

    async fn login(&self, email: &str, password: &str) -> Result<(StatusCode, Value), CliError> {
        self.call(Method::POST, "/auth/login", None, Some(json!({ "email": email, "password": password }))).await
    }
}

fn new_password() -> String {
    Alphanumeric.sample_string(&mut rand::rngs::OsRng, 16)
}

fn read_ca(path: &Path) -> Result<reqwest::Certificate, CliError> {
    let pem = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read CA {}: {e}", path.display())))?;
    reqwest::Certificate::from_pem(&pem).map_err(|e| CliError::usage(format!("invalid CA {}: {e}", path.display())))
}

/// Creates what is missing and updates what exists: one admin, two staff,
/// two family members and three patients with default alert rules.
/// Passwords are generated for new accounts only and reported once.
pub async fn seed_demo(opts: &SeedOptions) -> Result<SeedReport, CliError> {
    let mut builder = reqwest::Client::builder().timeout(Duration::from_secs(30));
    if let Some(ca) = &opts.ca_path {
        builder = builder.add_root_certificate(read_ca(ca)?);
    }
    let client = Client {
        http: builder.build().map_err(|e| CliError::runtime(format!("http client: {e}")))?,
        base: opts.api_url.trim_end_matches('/').to_string(),
    };
    let mut report = SeedReport::default();

    let admin_password = opts.admin_password.clone().unwrap_or_else(new_password);
    let body = json!({ "email": opts.admin_email, "password": admin_password, "role": "admin", "display_name": "Administrator" });
    let (status, value) = client.call(Method::POST, "/auth/register", None, Some(body)).await?;
    match status {
        StatusCode::CREATED => report.created_users.push(Credential {
            email: opts.admin_email.clone(),
            password: admin_password.clone(),
            role: "admin".into(),
        }),
        StatusCode::CONFLICT | StatusCode::FORBIDDEN if opts.admin_password.is_some() => {}
        StatusCode::CONFLICT | StatusCode::FORBIDDEN => {
            return Err(CliError::usage(format!(
                "the server already has accounts; pass the password of {} with --admin-password",
                opts.admin_email
            )))
        }
        _ => return Err(CliError::runtime(format!("registering the admin answered {status}: {value}"))),
    }
    let (status, login) = client.login(&opts.admin_email, &admin_password).await?;
    if status != StatusCode::OK {
        return Err(CliError::runtime(format!("admin login answered {status}: {login}")));
    }
    let admin = login["token"].as_str().unwrap_or_default().to_string();

    for patient in demo_patients() {
        let id = patient["patient_id"].as_str().expect("demo ids are set");
        let (status, value) = client.call(Method::POST, "/patients", Some(&admin), Some(patient.clone())).await?;
        match status {
            StatusCode::CREATED => report.created_patients.push(id.to_string()),
            StatusCode::CONFLICT if value["error"]["code"] == "patient_exists" => {
                let mut update = patient.clone();
                update.as_object_mut().expect("object").remove("patient_id");
                client.expect(Method::PUT, &format!("/patients/{id}"), Some(&admin), Some(update), &[StatusCode::OK]).await?;
                let defaults = json!([
                    { "metric": "temp_c", "min": 35.0, "max": 38.0 },
                    { "metric": "hr_bpm", "min": 50.0, "max": 110.0 },
                    { "metric": "spo2_pct", "min": 92.0, "max": 100.0 }
                ]);
                client.expect(Method::PUT, &format!("/patients/{id}/rules"), Some(&admin), Some(defaults), &[StatusCode::OK]).await?;
                report.updated_patients.push(id.to_string());
            }
            _ => return Err(CliError::runtime(format!("creating {id} answered {status}: {value}"))),
        }
    }

    let users = client.expect(Method::GET, "/users", Some(&admin), None, &[StatusCode::OK]).await?;
    for demo in USERS {
        let existing = users.as_array().into_iter().flatten().find(|u| u["email"] == demo.email);
        let user_id = match existing {
            Some(u) => u["user_id"].as_str().unwrap_or_default().to_string(),
            None => {
                let password = new_password();
                let body = json!({ "email": demo.email, "password": password, "role": demo.role, "display_name": demo.name });
                let created = client.expect(Method::POST, "/auth/register", Some(&admin), Some(body), &[StatusCode::CREATED]).await?;
                report.created_users.push(Credential { email: demo.email.into(), password, role: demo.role.into() });
                created["user_id"].as_str().unwrap_or_default().to_string()
            }
        };
        if !demo.links.is_empty() {
            let body = json!({ "patient_links": demo.links });
            client.expect(Method::PUT, &format!("/users/{user_id}/links"), Some(&admin), Some(body), &[StatusCode::OK]).await?;
        }
    }
    let _ = client.call(Method::POST, "/auth/logout", Some(&admin), None).await;
    Ok(report)
}
