use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use lify_core::{Clock, SystemClock};
use lify_mqtt::{tls, Backoff, BrokerUrl, ConnectOptions, MqttError, QoS, Session};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;
use tracing::{error, info, warn};

use crate::bus::EventBus;
use crate::bus_tcp::serve_bus_tcp;
use crate::dedup::DEFAULT_DEDUP_CAPACITY;
use crate::ingest::Gateway;
use crate::storage::{FileStore, MemoryStore, StorageError, TelemetryStore};

pub const TELEMETRY_FILTER: &str = "lify/v1/telemetry/+";
const RECONNECT_BASE: Duration = Duration::from_millis(500);
const RECONNECT_CAP: Duration = Duration::from_secs(30);

/// Gateway settings, the `[gateway]` section of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub broker_url: String,
    pub tls_required: bool,
    pub ca_path: Option<PathBuf>,
    /// Also the broker session name; keep it stable so queued messages
    /// survive a gateway restart.
    pub client_id: String,
    /// File-backed storage root; in-memory storage when absent.
    pub data_root: Option<PathBuf>,
    pub dedup_capacity: usize,
    pub listen_bus: Option<SocketAddr>,
    pub keep_alive_s: u16,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            broker_url: "mqtts://127.0.0.1:8883".into(),
            tls_required: true,
            ca_path: None,
            client_id: "lify-gateway".into(),
            data_root: None,
            dedup_capacity: DEFAULT_DEDUP_CAPACITY,
            listen_bus: None,
            keep_alive_s: 30,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mqtt(#[from] MqttError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("event bus relay on {addr}: {source}")]
    BusRelay { addr: SocketAddr, source: std::io::Error },
}

impl GatewayConfig {
    pub fn open_store(&self) -> Result<Arc<dyn TelemetryStore>, GatewayError> {
        Ok(match &self.data_root {
            Some(root) => Arc::new(FileStore::open(root.join("telemetry"))?),
            None => Arc::new(MemoryStore::new()),
        })
    }

    /// Opens storage and assembles a gateway on the given bus.
    pub fn build(&self, bus: EventBus) -> Result<Arc<Gateway>, GatewayError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        Ok(Arc::new(Gateway::new(self.open_store()?, bus, clock, self.dedup_capacity)))
    }

    /// Checks everything that would make the subscriber fail permanently.
    pub fn connect_options(&self) -> Result<ConnectOptions, GatewayError> {
        let url: BrokerUrl = self.broker_url.parse()?;
        if !url.tls && self.tls_required {
            return Err(MqttError::PlaintextRefused(url.to_string()).into());
        }
        let mut opts = ConnectOptions::new(url, self.client_id.clone());
        opts.clean_session = false;
        opts.tls_required = self.tls_required;
        opts.keep_alive_s = self.keep_alive_s;
        if opts.url.tls {
            let ca = self
                .ca_path
                .as_ref()
                .ok_or_else(|| GatewayError::Config(format!("{} needs a CA certificate (ca_path)", opts.url)))?;
            opts.tls = Some(tls::client_config(ca)?);
        }
        Ok(opts)
    }
}

/// Subscribes to device telemetry and feeds it to `gateway` until `shutdown`
/// turns true. Reconnects on broker loss; returns early only on
/// configuration or trust failures.
pub async fn run_gateway(
    config: GatewayConfig,
    gateway: Arc<Gateway>,
    mut shutdown: watch::Receiver<bool>,
) -> Result<(), GatewayError> {
    let opts = config.connect_options()?;
    if let Some(addr) = config.listen_bus {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| GatewayError::BusRelay { addr, source })?;
        let bus = gateway.bus().clone();
        tokio::spawn(async move {
            if let Err(e) = serve_bus_tcp(bus, listener).await {
                error!(error = %e, "event bus relay stopped");
            }
        });
    }

    let mut backoff = Backoff::new(RECONNECT_BASE, RECONNECT_CAP);
    loop {
        if *shutdown.borrow() {
            return Ok(());
        }
        let result = tokio::select! {
            r = subscribe_and_ingest(&opts, &gateway, &mut backoff) => r,
            _ = shutdown.wait_for(|s| *s) => return Ok(()),
        };
        match result {
            Err(e) if e.is_fatal() => {
                error!(error = %e, "gateway cannot reach broker");
                return Err(e.into());
            }
            Err(e) => {
                let delay = backoff.next_delay();
                warn!(error = %e, retry_in_ms = delay.as_millis() as u64, "broker connection lost");
                tokio::select! {
                    _ = tokio::time::sleep(delay) => {}
                    _ = shutdown.wait_for(|s| *s) => return Ok(()),
                }
            }
            Ok(()) => {}
        }
    }
}

async fn subscribe_and_ingest(
    opts: &ConnectOptions,
    gateway: &Arc<Gateway>,
    backoff: &mut Backoff,
) -> Result<(), MqttError> {
    let mut session = Session::connect(opts).await?;
    session.subscribe(TELEMETRY_FILTER, QoS::AtLeastOnce).await?;
    info!(url = %opts.url, resumed = session.session_present(), "gateway subscribed");
    backoff.reset();
    loop {
        let msg = session.next_publish().await?;
        let outcome = gateway.on_message(&msg.topic, &msg.payload);
        if outcome.should_ack() {
            session.ack(&msg).await?;
        } else {
            // Leave it unacknowledged; the broker redelivers after reconnect.
            return Err(MqttError::Protocol(format!("ingest failed for {}, reconnecting", msg.topic)));
        }
    }
}
