//! Starts any subset of the services in one process.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use lify_alerts::{AlertEngine, AlertStore, RuleBook, NOTIFY_QUEUE_CAPACITY};
use lify_api::{serve_api, AccountDirectory, AppState, PatientStore, UserStore};
use lify_core::{Clock, SystemClock};
use lify_gateway::{forward_bus_tcp, run_gateway, serve_bus_tcp, EventBus, Gateway, MemoryStore, TelemetryStore};
use lify_mqtt::tls::{self, DevCertificates};
use lify_mqtt::{Broker, BrokerConfig, BrokerHandle};
use lify_notifier::{
    run_notifier, BindingRegistry, BotToken, ChatTransport, Dispatcher, HttpTransport, ReceiptLog, RecipientDirectory,
    RetryPolicy, TokioSleeper,
};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinSet;
use tracing::{error, info, warn};

use crate::config::{LifyConfig, Profile};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Services {
    pub gateway: bool,
    pub alerts: bool,
    pub notifier: bool,
    pub api: bool,
}

impl Services {
    pub const ALL: Services = Services { gateway: true, alerts: true, notifier: true, api: true };

    /// Parses a comma-separated list such as `gateway,alerts`.
    pub fn parse_list(list: &str) -> Result<Self, CliError> {
        let mut s = Services::default();
        for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "gateway" => s.gateway = true,
                "alerts" | "alert-engine" => s.alerts = true,
                "notifier" => s.notifier = true,
                "api" => s.api = true,
                other => {
                    return Err(CliError::usage(format!(
                        "unknown service {other:?}; expected gateway, alerts, notifier or api"
                    )))
                }
            }
        }
        if s == Services::default() {
            return Err(CliError::usage("--only needs at least one service"));
        }
        Ok(s)
    }

    /// In-process dependencies: the API reads the gateway's storage and
    /// the alert engine's stores, the notifier is fed by the engine, and an
    /// engine without a local gateway needs a remote bus.
    pub fn check(&self, remote_bus: Option<SocketAddr>) -> Result<(), CliError> {
        if self.api && !(self.gateway && self.alerts) {
            return Err(CliError::usage("the api service needs gateway and alerts in the same process"));
        }
        if self.notifier && !self.alerts {
            return Err(CliError::usage("the notifier service needs alerts in the same process"));
        }
        if self.alerts && !self.gateway && remote_bus.is_none() {
            return Err(CliError::usage("alerts without a local gateway need --remote-bus"));
        }
        Ok(())
    }
}

pub struct ServeOptions {
    pub config: LifyConfig,
    pub services: Services,
    pub embedded_broker: bool,
    /// Event bus relay of a gateway running in another process.
    pub remote_bus: Option<SocketAddr>,
    /// Where to offer this process's event bus to other processes.
    pub bus_listen: Option<SocketAddr>,
    /// Replaces the HTTP chat transport.
    pub transport: Option<Arc<dyn ChatTransport>>,
    /// Replaces the account-backed recipient directory.
    pub directory: Option<Arc<dyn RecipientDirectory>>,
    pub bindings: Option<Arc<BindingRegistry>>,
    pub retry_policy: RetryPolicy,
}

impl ServeOptions {
    pub fn new(config: LifyConfig, services: Services) -> Self {
        Self {
            config,
            services,
            embedded_broker: false,
            remote_bus: None,
            bus_listen: None,
            transport: None,
            directory: None,
            bindings: None,
            retry_policy: RetryPolicy::default(),
        }
    }
}

/// Where a started stack can be reached; printed by `serve` as its ready
/// line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadyInfo {
    pub services: Services,
    pub api: Option<SocketAddr>,
    pub api_tls: bool,
    pub broker: Option<SocketAddr>,
    pub broker_url: Option<String>,
    pub bus: Option<SocketAddr>,
    pub ca_path: Option<PathBuf>,
}

type Task = (&'static str, Result<(), CliError>);

pub struct Stack {
    pub ready: ReadyInfo,
    pub bus: EventBus,
    pub broker: Option<BrokerHandle>,
    pub gateway: Option<Arc<Gateway>>,
    pub engine: Option<Arc<AlertEngine>>,
    pub app: Option<AppState>,
    shutdown: watch::Sender<bool>,
    tasks: JoinSet<Task>,
    notifier: Option<tokio::task::JoinHandle<()>>,
}

impl Stack {
    pub async fn start(mut opts: ServeOptions) -> Result<Stack, CliError> {
        let services = opts.services;
        services.check(opts.remote_bus)?;
        let config = &mut opts.config;
        if config.gateway.data_root.is_none() {
            config.gateway.data_root = config.data_root.clone();
        }
        let data_root = config.data_root.clone();
        if let Some(root) = &data_root {
            std::fs::create_dir_all(root)
                .map_err(|e| CliError::usage(format!("cannot create data root {}: {e}", root.display())))?;
        }
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let bus = EventBus::new();
        let (shutdown, shutdown_rx) = watch::channel(false);
        let mut tasks = JoinSet::new();

        let broker = if opts.embedded_broker { Some(start_broker(config).await?) } else { None };

        let gateway = if services.gateway {
            config.gateway.connect_options().map_err(|e| CliError::usage(format!("gateway: {e}")))?;
            let gateway = config.gateway.build(bus.clone())?;
            let (cfg, gw, rx) = (config.gateway.clone(), gateway.clone(), shutdown_rx.clone());
            tasks.spawn(async move { ("gateway", run_gateway(cfg, gw, rx).await.map_err(CliError::from)) });
            Some(gateway)
        } else {
            None
        };
        if let (Some(addr), false) = (opts.remote_bus, services.gateway) {
            tokio::spawn(forward_bus_tcp(addr, bus.clone()));
        }
        let bus_addr = match opts.bus_listen {
            Some(addr) => {
                let listener = TcpListener::bind(addr)
                    .await
                    .map_err(|e| CliError::runtime(format!("cannot listen on {addr} for the bus: {e}")))?;
                let local = listener.local_addr().map_err(CliError::runtime)?;
                let (b, mut stop) = (bus.clone(), shutdown_rx.clone());
                tasks.spawn(async move {
                    tokio::select! {
                        r = serve_bus_tcp(b, listener) => ("bus", r.map_err(CliError::runtime)),
                        _ = stop.wait_for(|s| *s) => ("bus", Ok(())),
                    }
                });
                Some(local)
            }
            None => None,
        };

        let telemetry: Arc<dyn TelemetryStore> = match &gateway {
            Some(g) => g.store().clone(),
            None => Arc::new(MemoryStore::new()),
        };

        let mut notify_rx = None;
        let engine = if services.alerts {
            let (rules, alerts) = match &data_root {
                Some(root) => (
                    RuleBook::open(root.join("alerts").join("rules.json"))?,
                    AlertStore::open(root.join("alerts").join("alerts.ndjson"))?,
                ),
                None => (RuleBook::in_memory(), AlertStore::in_memory()),
            };
            let mut engine = AlertEngine::new(Arc::new(rules), Arc::new(alerts), bus.clone(), clock.clone());
            if services.notifier {
                let (tx, rx) = mpsc::channel(NOTIFY_QUEUE_CAPACITY);
                engine = engine.with_notifier(tx);
                notify_rx = Some(rx);
            }
            let engine = Arc::new(engine);
            let (e, rx, stop) = (engine.clone(), bus.subscribe(), shutdown_rx.clone());
            tasks.spawn(async move {
                e.run(rx, stop).await;
                ("alerts", Ok(()))
            });
            Some(engine)
        } else {
            None
        };

        let mut ready = ReadyInfo {
            services,
            api: None,
            api_tls: false,
            broker: broker.as_ref().map(|b| b.local_addr()),
            broker_url: services.gateway.then(|| config.gateway.broker_url.clone()),
            bus: bus_addr,
            ca_path: config.gateway.ca_path.clone(),
        };

        let app = if services.api {
            let engine = engine.clone().expect("checked: api implies alerts");
            let app = AppState::open(data_root.as_deref(), telemetry, engine, bus.clone(), clock.clone())?;
            let api_cfg = config.api.clone();
            if config.profile == Profile::Prod && api_cfg.tls()?.is_none() {
                return Err(CliError::usage("the prod profile requires --tls-cert and --tls-key"));
            }
            ready.api_tls = api_cfg.tls()?.is_some();
            let listener = TcpListener::bind(api_cfg.listen)
                .await
                .map_err(|e| CliError::runtime(format!("cannot listen on {}: {e}", api_cfg.listen)))?;
            ready.api = Some(listener.local_addr().map_err(CliError::runtime)?);
            let (state, rx) = (app.clone(), shutdown_rx.clone());
            tasks.spawn(async move { ("api", serve_api(listener, state, &api_cfg, rx).await.map_err(CliError::from)) });
            Some(app)
        } else {
            None
        };

        let mut notifier = None;
        if let Some(rx) = notify_rx {
            let transport = match opts.transport.take() {
                Some(t) => Some(t),
                None => http_transport(config)?,
            };
            match transport {
                None => warn!(
                    env = %config.notifier.token_env,
                    "no bot token set; alerts are stored but chat notifications are disabled"
                ),
                Some(transport) => {
                    let receipts = match &data_root {
                        Some(root) => {
                            let dir = root.join("notify");
                            std::fs::create_dir_all(&dir)
                                .and_then(|_| ReceiptLog::open(dir.join("receipts.ndjson")))
                                .map_err(|e| CliError::runtime(format!("receipt log: {e}")))?
                        }
                        None => ReceiptLog::in_memory(),
                    };
                    let dispatcher = Arc::new(Dispatcher::new(
                        transport,
                        Arc::new(receipts),
                        Arc::new(TokioSleeper),
                        clock.clone(),
                        opts.retry_policy,
                    ));
                    let (directory, bindings) = recipients(&opts, app.as_ref(), data_root.as_deref())?;
                    notifier = Some(tokio::spawn(async move {
                        let stats = run_notifier(rx, dispatcher, directory, bindings).await;
                        info!(?stats, "notifier stopped");
                    }));
                }
            }
        }

        info!(?services, api = ?ready.api, broker = ?ready.broker, "services started");
        Ok(Stack { ready, bus, broker, gateway, engine, app, shutdown, tasks, notifier })
    }

    /// Runs until Ctrl-C or until a service fails, then shuts down.
    pub async fn run_until_interrupted(mut self) -> Result<(), CliError> {
        let failure = tokio::select! {
            _ = tokio::signal::ctrl_c() => None,
            done = self.tasks.join_next() => match done {
                Some(Ok((name, Err(e)))) => Some(CliError::Runtime(format!("{name}: {e}"))),
                Some(Ok((name, Ok(())))) => Some(CliError::runtime(format!("{name} stopped unexpectedly"))),
                Some(Err(e)) => Some(CliError::runtime(format!("service task failed: {e}"))),
                None => None,
            },
        };
        if let Some(e) = &failure {
            error!(error = %e, "shutting down after a service failure");
        }
        self.shutdown().await;
        failure.map_or(Ok(()), Err)
    }

    /// Stops every service and waits briefly for them to finish.
    pub async fn shutdown(mut self) {
        self.shutdown.send_replace(true);
        let drain = async {
            while let Some(done) = self.tasks.join_next().await {
                if let Ok((name, Err(e))) = done {
                    warn!(service = name, error = %e, "service ended with an error");
                }
            }
        };
        if tokio::time::timeout(Duration::from_secs(10), drain).await.is_err() {
            warn!("services did not stop within 10 s");
            self.tasks.abort_all();
        }
        if let Some(n) = self.notifier.take() {
            n.abort();
        }
        if let Some(b) = self.broker.take() {
            b.shutdown().await;
        }
    }
}

/// Starts the embedded broker and points the gateway at it.
async fn start_broker(config: &mut LifyConfig) -> Result<BrokerHandle, CliError> {
    let section = config.broker.clone();
    let tls = if section.plaintext {
        None
    } else {
        let (cert, key) = match (&section.tls_cert, &section.tls_key) {
            (Some(c), Some(k)) => (c.clone(), k.clone()),
            (None, None) => {
                let dir = match &config.data_root {
                    Some(root) => root.join("certs"),
                    None => std::env::temp_dir().join(format!("lify-certs-{}", std::process::id())),
                };
                let certs = dev_certificates(&dir)?;
                if config.gateway.ca_path.is_none() {
                    config.gateway.ca_path = Some(certs.ca_cert.clone());
                }
                (certs.server_cert, certs.server_key)
            }
            _ => return Err(CliError::usage("broker tls_cert and tls_key must be given together")),
        };
        Some(tls::server_config(&cert, &key).map_err(|e| CliError::usage(format!("broker: {e}")))?)
    };
    let plaintext = tls.is_none();
    let handle = Broker::start(BrokerConfig::new(section.listen, tls))
        .await
        .map_err(|e| CliError::runtime(format!("broker cannot listen on {}: {e}", section.listen)))?;
    let port = handle.local_addr().port();
    config.gateway.broker_url =
        if plaintext { format!("mqtt://127.0.0.1:{port}") } else { format!("mqtts://localhost:{port}") };
    Ok(handle)
}

/// Reuses a development PKI in `dir`, generating one the first time.
pub fn dev_certificates(dir: &Path) -> Result<DevCertificates, CliError> {
    let existing =
        DevCertificates { ca_cert: dir.join("ca.pem"), server_cert: dir.join("server.pem"), server_key: dir.join("server.key") };
    if existing.ca_cert.exists() && existing.server_cert.exists() && existing.server_key.exists() {
        return Ok(existing);
    }
    DevCertificates::generate(dir, &[])
        .map_err(|e| CliError::runtime(format!("cannot create certificates in {}: {e}", dir.display())))
}

fn http_transport(config: &LifyConfig) -> Result<Option<Arc<dyn ChatTransport>>, CliError> {
    let token = match std::env::var(&config.notifier.token_env) {
        Ok(t) if !t.trim().is_empty() => BotToken::new(t.trim()),
        _ => return Ok(None),
    };
    let transport = HttpTransport::new(
        config.notifier.api_base.clone(),
        token,
        Duration::from_millis(config.notifier.timeout_ms),
    )
    .map_err(|e| CliError::runtime(format!("chat transport: {e}")))?;
    Ok(Some(Arc::new(transport)))
}

fn recipients(
    opts: &ServeOptions,
    app: Option<&AppState>,
    data_root: Option<&Path>,
) -> Result<(Arc<dyn RecipientDirectory>, Arc<BindingRegistry>), CliError> {
    let bindings = match (&opts.bindings, app) {
        (Some(b), _) => b.clone(),
        (None, Some(app)) => app.bindings.clone(),
        (None, None) => Arc::new(match data_root {
            Some(root) => BindingRegistry::open(root.join("notify").join("bindings.json"))
                .map_err(|e| CliError::runtime(format!("bindings: {e}")))?,
            None => BindingRegistry::in_memory(),
        }),
    };
    let directory: Arc<dyn RecipientDirectory> = match (&opts.directory, app) {
        (Some(d), _) => d.clone(),
        (None, Some(app)) => Arc::new(AccountDirectory::new(app.users.clone(), app.patients.clone())),
        (None, None) => {
            let file = |name: &str| data_root.map(|r| r.join("api").join(name));
            let users = UserStore::open(file("users.json")).map_err(CliError::runtime)?;
            let patients = PatientStore::open(file("patients.json")).map_err(CliError::runtime)?;
            Arc::new(AccountDirectory::new(Arc::new(users), Arc::new(patients)))
        }
    };
    Ok((directory, bindings))
}
