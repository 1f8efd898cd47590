#![allow(dead_code)]

pub mod matrix;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use lify_alerts::{AlertEngine, AlertStore, RuleBook};
use lify_api::{serve_api, AccountDirectory, ApiConfig, AppState};
use lify_core::{Clock, SystemClock};
use lify_gateway::{EventBus, FileStore, Gateway, MemoryStore, TelemetryStore};
use lify_notifier::{run_notifier, Dispatcher, MockTransport, ReceiptLog, RetryPolicy, TokioSleeper};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

pub const PASSWORD: &str = "correct horse battery";

/// A running API with a gateway feeding its bus, the alert engine consuming
/// it and a notifier sending to a mock chat transport.
pub struct Api {
    pub base: String,
    pub client: reqwest::Client,
    pub state: AppState,
    pub gateway: Arc<Gateway>,
    pub transport: Arc<MockTransport>,
    shutdown: watch::Sender<bool>,
    server: tokio::task::JoinHandle<()>,
}

impl Api {
    pub async fn start() -> Self {
        Self::start_with(None).await
    }

    pub async fn start_with(data_root: Option<&Path>) -> Self {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let bus = EventBus::new();
        let telemetry: Arc<dyn TelemetryStore> = match data_root {
            Some(root) => Arc::new(FileStore::open(root.join("telemetry")).unwrap()),
            None => Arc::new(MemoryStore::new()),
        };
        let (rules, alerts) = match data_root {
            Some(root) => (
                RuleBook::open(root.join("alerts/rules.json")).unwrap(),
                AlertStore::open(root.join("alerts/alerts.ndjson")).unwrap(),
            ),
            None => (RuleBook::in_memory(), AlertStore::in_memory()),
        };
        let (notify_tx, notify_rx) = mpsc::channel(64);
        let engine = Arc::new(
            AlertEngine::new(Arc::new(rules), Arc::new(alerts), bus.clone(), clock.clone()).with_notifier(notify_tx),
        );
        let state = AppState::open(data_root, telemetry.clone(), engine.clone(), bus.clone(), clock.clone()).unwrap();
        let gateway = Arc::new(Gateway::new(telemetry, bus.clone(), clock.clone(), 10_000));

        let (shutdown, shutdown_rx) = watch::channel(false);
        tokio::spawn(engine.run(bus.subscribe(), shutdown_rx.clone()));
        let transport = Arc::new(MockTransport::new());
        let dispatcher = Arc::new(Dispatcher::new(
            transport.clone(),
            Arc::new(ReceiptLog::in_memory()),
            Arc::new(TokioSleeper),
            clock,
            RetryPolicy::default(),
        ));
        let directory = Arc::new(AccountDirectory::new(state.users.clone(), state.patients.clone()));
        tokio::spawn(run_notifier(notify_rx, dispatcher, directory, state.bindings.clone()));

        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}/api/v1", listener.local_addr().unwrap());
        let server = {
            let state = state.clone();
            tokio::spawn(async move {
                serve_api(listener, state, &ApiConfig::default(), shutdown_rx).await.unwrap();
            })
        };
        Self { base, client: reqwest::Client::new(), state, gateway, transport, shutdown, server }
    }

    /// Stops the server and waits for it to drain.
    pub async fn stop(self) {
        self.shutdown.send_replace(true);
        tokio::time::timeout(Duration::from_secs(5), self.server).await.unwrap().unwrap();
    }

    pub async fn raw(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, String) {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        (status, resp.text().await.unwrap())
    }

    pub async fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.raw(method, path, token, body).await;
        let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
        (status, value)
    }

    pub async fn register(&self, token: Option<&str>, email: &str, role: &str) -> (StatusCode, Value) {
        let body = json!({ "email": email, "password": PASSWORD, "role": role, "display_name": email.split('@').next().unwrap() });
        self.call(Method::POST, "/auth/register", token, Some(body)).await
    }

    pub async fn login(&self, email: &str) -> String {
        let (status, body) =
            self.call(Method::POST, "/auth/login", None, Some(json!({ "email": email, "password": PASSWORD }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["token"].as_str().unwrap().to_string()
    }

    /// Admin, staff and family accounts plus patients `p1` and `p2`; the
    /// family member follows `p1` only.
    pub async fn seed(&self) -> Cast {
        let (s, admin) = self.register(None, "admin@care.test", "admin").await;
        assert_eq!(s, StatusCode::CREATED, "{admin}");
        let admin_token = self.login("admin@care.test").await;
        let (s, staff) = self.register(Some(&admin_token), "nurse@care.test", "staff").await;
        assert_eq!(s, StatusCode::CREATED, "{staff}");
        let (s, family) = self.register(None, "son@home.test", "family").await;
        assert_eq!(s, StatusCode::CREATED, "{family}");
        let cast = Cast {
            admin: Member { token: admin_token, user_id: id_of(&admin) },
            staff: Member { token: self.login("nurse@care.test").await, user_id: id_of(&staff) },
            family: Member { token: self.login("son@home.test").await, user_id: id_of(&family) },
        };
        for (id, device) in [("p1", "dev-1"), ("p2", "dev-2")] {
            let body = json!({ "patient_id": id, "name": format!("Patient {id}"), "birth_date": "1941-05-17", "device_ids": [device] });
            let (s, b) = self.call(Method::POST, "/patients", Some(&cast.staff.token), Some(body)).await;
            assert_eq!(s, StatusCode::CREATED, "{b}");
        }
        let path = format!("/users/{}/links", cast.family.user_id);
        let (s, b) = self.call(Method::PUT, &path, Some(&cast.admin.token), Some(json!({ "patient_links": ["p1"] }))).await;
        assert_eq!(s, StatusCode::OK, "{b}");
        cast
    }
}

fn id_of(user: &Value) -> String {
    user["user_id"].as_str().unwrap().to_string()
}

#[derive(Debug, Clone)]
pub struct Member {
    pub token: String,
    pub user_id: String,
}

#[derive(Debug, Clone)]
pub struct Cast {
    pub admin: Member,
    pub staff: Member,
    pub family: Member,
}

impl Cast {
    pub fn roles(&self) -> [(&'static str, &Member); 3] {
        [("admin", &self.admin), ("staff", &self.staff), ("family", &self.family)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SseEvent {
    pub name: String,
    pub id: Option<String>,
    pub data: String,
}

/// Minimal server-sent-events reader over a streaming response.
pub struct SseReader {
    resp: reqwest::Response,
    buf: String,
}

impl SseReader {
    pub fn new(resp: reqwest::Response) -> Self {
        Self { resp, buf: String::new() }
    }

    /// The next event, skipping comments; `None` when the stream ends.
    pub async fn next(&mut self) -> Option<SseEvent> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut event = SseEvent { name: "message".into(), id: None, data: String::new() };
                let mut any = false;
                for line in block.lines() {
                    let (field, value) = line.split_once(':').unwrap_or((line, ""));
                    let value = value.strip_prefix(' ').unwrap_or(value);
                    match field {
                        "event" => event.name = value.into(),
                        "id" => event.id = Some(value.into()),
                        "data" => event.data.push_str(value),
                        _ => continue,
                    }
                    any = true;
                }
                if any {
                    return Some(event);
                }
                continue;
            }
            let chunk = self.resp.chunk().await.ok()??;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    pub async fn next_within(&mut self, limit: Duration) -> Option<SseEvent> {
        tokio::time::timeout(limit, self.next()).await.ok().flatten()
    }
}

impl Api {
    pub async fn open_stream(&self, token: &str, query: &str, last_event_id: Option<u64>) -> SseReader {
        let mut req = self.client.get(format!("{}/stream{query}", self.base)).bearer_auth(token);
        if let Some(id) = last_event_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        let resp = req.send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        SseReader::new(resp)
    }
}
