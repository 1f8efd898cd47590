use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lify_core::{MetricKind, TelemetryEnvelope};
use lify_mqtt::{tls, Backoff, ConnectOptions, Session};
use serde::Serialize;
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tracing::{info, warn};

use crate::buffer::RetryBuffer;
use crate::config::AgentConfig;
use crate::error::AgentError;
use crate::publish::{publish, PublishError};
use crate::simulator::PatientSimulator;

/// Counters reported when an agent stops.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgentStats {
    pub device_id: String,
    pub generated: u64,
    pub published: u64,
    pub dropped: u64,
    pub oversized: u64,
    pub publish_failures: u64,
    pub connects: u64,
    pub buffered: u64,
    /// Values generated per metric code (omitted values not counted).
    pub values: BTreeMap<String, u64>,
}

#[derive(Default)]
struct Counters {
    generated: AtomicU64,
    published: AtomicU64,
    oversized: AtomicU64,
    publish_failures: AtomicU64,
    connects: AtomicU64,
    values: [AtomicU64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Running,
    /// Acquisition finished; exit once the buffer is empty.
    Draining,
    Stopped,
}

struct Shared {
    buffer: Mutex<RetryBuffer<TelemetryEnvelope>>,
    ready: Notify,
    counters: Counters,
}

pub struct Agent;

impl Agent {
    /// Validates the configuration and starts the acquisition and publish
    /// loops on the current runtime.
    pub fn spawn(config: AgentConfig) -> Result<AgentHandle, AgentError> {
        let url = config.validate()?;
        let mut opts = ConnectOptions::new(url, config.device_id.clone());
        opts.tls_required = config.tls_required;
        opts.keep_alive_s = config.keep_alive_s;
        if opts.url.tls {
            let ca = config.ca_path.as_ref().expect("validated");
            opts.tls = Some(tls::client_config(ca)?);
        } else if config.tls_required {
            return Err(AgentError::Fatal(lify_mqtt::MqttError::PlaintextRefused(opts.url.to_string())));
        }

        let origin = config.start_ts_ms.unwrap_or_else(lify_core::now_ms);
        let simulator = PatientSimulator::new(
            config.device_id.clone(),
            config.patient_id.clone(),
            config.patient.clone(),
            config.seed,
            origin,
        )?;
        let shared = Arc::new(Shared {
            buffer: Mutex::new(RetryBuffer::new(config.buffer_capacity)),
            ready: Notify::new(),
            counters: Counters::default(),
        });
        let (mode_tx, mode_rx) = watch::channel(Mode::Running);
        let mode_tx = Arc::new(mode_tx);
        let period = Duration::from_millis(config.period_ms);

        let acquisition = tokio::spawn(acquire_loop(
            simulator,
            origin,
            period,
            config.cycles,
            shared.clone(),
            mode_tx.clone(),
            mode_rx.clone(),
        ));
        let publisher = tokio::spawn(publish_loop(opts, shared.clone(), mode_tx.clone(), mode_rx));
        info!(device_id = %config.device_id, origin, "agent started");
        Ok(AgentHandle { device_id: config.device_id, shared, mode: mode_tx, acquisition, publisher })
    }

    /// The envelopes an agent with this configuration generates in its first
    /// `cycles` cycles. Requires a fixed `start_ts_ms`.
    pub fn replay(config: &AgentConfig, cycles: u64) -> Result<Vec<TelemetryEnvelope>, AgentError> {
        let origin = config
            .start_ts_ms
            .ok_or_else(|| AgentError::InvalidConfig("replay needs start_ts_ms".into()))?;
        let mut sim = PatientSimulator::new(
            config.device_id.clone(),
            config.patient_id.clone(),
            config.patient.clone(),
            config.seed,
            origin,
        )?;
        Ok((0..cycles)
            .map(|i| sim.acquire_cycle(origin + (i * config.period_ms) as i64))
            .collect())
    }
}

async fn acquire_loop(
    mut simulator: PatientSimulator,
    origin: i64,
    period: Duration,
    cycles: Option<u64>,
    shared: Arc<Shared>,
    mode_tx: Arc<watch::Sender<Mode>>,
    mut mode_rx: watch::Receiver<Mode>,
) {
    let start = Instant::now();
    let mut cycle: u64 = 0;
    while cycles.map_or(true, |n| cycle < n) {
        let due = start + period * cycle as u32;
        tokio::select! {
            _ = tokio::time::sleep_until(due) => {}
            _ = mode_rx.wait_for(|m| *m != Mode::Running) => return,
        }
        let ts = origin + (cycle as u128 * period.as_millis()) as i64;
        let env = simulator.acquire_cycle(ts);
        let c = &shared.counters;
        c.generated.fetch_add(1, Ordering::Relaxed);
        for (i, m) in MetricKind::ALL.iter().enumerate() {
            if env.metrics.contains_key(m) {
                c.values[i].fetch_add(1, Ordering::Relaxed);
            }
        }
        if let Some(evicted) = shared.buffer.lock().unwrap().push(env) {
            warn!(ts_ms = evicted.ts_ms, "retry buffer full, dropped oldest envelope");
        }
        shared.ready.notify_one();
        cycle += 1;
    }
    mode_tx.send_if_modified(|m| {
        if *m == Mode::Running {
            *m = Mode::Draining;
            true
        } else {
            false
        }
    });
    shared.ready.notify_one();
}

async fn publish_loop(
    opts: ConnectOptions,
    shared: Arc<Shared>,
    mode_tx: Arc<watch::Sender<Mode>>,
    mut mode: watch::Receiver<Mode>,
) -> Result<(), AgentError> {
    let mut session: Option<Session> = None;
    let mut backoff = Backoff::new(Duration::from_millis(500), Duration::from_secs(10));
    let c = &shared.counters;

    loop {
        let current = *mode.borrow();
        if current == Mode::Stopped {
            break;
        }
        let next = shared.buffer.lock().unwrap().front();
        let Some((seq, env)) = next else {
            if current == Mode::Draining {
                break;
            }
            let keep_alive = session.as_ref().map_or(Duration::from_secs(15), |s| s.keep_alive_interval() / 2);
            tokio::select! {
                _ = shared.ready.notified() => {}
                _ = mode.changed() => {}
                _ = tokio::time::sleep(keep_alive) => {
                    if let Some(s) = session.as_mut() {
                        if s.keep_alive().await.is_err() {
                            session = None;
                        }
                    }
                }
            }
            continue;
        };

        if session.is_none() {
            match Session::connect(&opts).await {
                Ok(s) => {
                    c.connects.fetch_add(1, Ordering::Relaxed);
                    backoff.reset();
                    session = Some(s);
                }
                Err(e) if e.is_fatal() => {
                    let _ = mode_tx.send(Mode::Stopped);
                    return Err(AgentError::Fatal(e));
                }
                Err(e) => {
                    let delay = backoff.next_delay();
                    warn!(error = %e, ?delay, "broker unavailable, retrying");
                    tokio::select! {
                        _ = tokio::time::sleep(delay) => {}
                        _ = mode.wait_for(|m| *m == Mode::Stopped) => {}
                    }
                    continue;
                }
            }
        }

        let s = session.as_mut().expect("connected above");
        match publish(&env, s).await {
            Ok(()) => {
                shared.buffer.lock().unwrap().ack(seq);
                c.published.fetch_add(1, Ordering::Relaxed);
            }
            Err(PublishError::PayloadTooLarge(n)) => {
                warn!(bytes = n, "discarding oversized envelope");
                shared.buffer.lock().unwrap().ack(seq);
                c.oversized.fetch_add(1, Ordering::Relaxed);
            }
            Err(PublishError::NotConnected(e)) => {
                warn!(error = %e, "publish failed, envelope kept for retry");
                c.publish_failures.fetch_add(1, Ordering::Relaxed);
                session = None;
            }
        }
    }
    if let Some(s) = session {
        let _ = s.disconnect().await;
    }
    Ok(())
}

pub struct AgentHandle {
    device_id: String,
    shared: Arc<Shared>,
    mode: Arc<watch::Sender<Mode>>,
    acquisition: JoinHandle<()>,
    publisher: JoinHandle<Result<(), AgentError>>,
}

/// Cloneable stop switch for a running agent.
#[derive(Clone)]
pub struct AgentStopper(Arc<watch::Sender<Mode>>);

impl AgentStopper {
    pub fn stop(&self) {
        let _ = self.0.send(Mode::Stopped);
    }
}

impl AgentHandle {
    pub fn stats(&self) -> AgentStats {
        let c = &self.shared.counters;
        let buffer = self.shared.buffer.lock().unwrap();
        AgentStats {
            device_id: self.device_id.clone(),
            generated: c.generated.load(Ordering::Relaxed),
            published: c.published.load(Ordering::Relaxed),
            dropped: buffer.dropped(),
            oversized: c.oversized.load(Ordering::Relaxed),
            publish_failures: c.publish_failures.load(Ordering::Relaxed),
            connects: c.connects.load(Ordering::Relaxed),
            buffered: buffer.len() as u64,
            values: MetricKind::ALL
                .iter()
                .enumerate()
                .map(|(i, m)| (m.code().to_string(), c.values[i].load(Ordering::Relaxed)))
                .collect(),
        }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn stopper(&self) -> AgentStopper {
        AgentStopper(self.mode.clone())
    }

    /// Waits for the configured cycle limit (or a stop), then gives the
    /// publisher up to `drain` to empty the buffer. Returns the publisher's
    /// fatal error if it hit one.
    pub async fn finish(mut self, drain: Duration) -> Result<AgentStats, AgentError> {
        let _ = (&mut self.acquisition).await;
        self.mode.send_if_modified(|m| {
            if *m == Mode::Running {
                *m = Mode::Draining;
                true
            } else {
                false
            }
        });
        self.shared.ready.notify_one();
        let joined = match tokio::time::timeout(drain, &mut self.publisher).await {
            Ok(joined) => joined,
            Err(_) => {
                let _ = self.mode.send(Mode::Stopped);
                (&mut self.publisher).await
            }
        };
        match joined {
            Ok(Ok(())) => Ok(self.stats()),
            Ok(Err(e)) => Err(e),
            Err(e) => Err(AgentError::InvalidConfig(format!("publisher task failed: {e}"))),
        }
    }

    /// Stops immediately, abandoning anything still buffered.
    pub async fn stop(mut self) -> AgentStats {
        let _ = self.mode.send(Mode::Stopped);
        let _ = (&mut self.acquisition).await;
        let _ = (&mut self.publisher).await;
        self.stats()
    }
}

/// Runs one agent until its cycle limit is reached or the process receives
/// Ctrl-C.
pub async fn run_agent(config: AgentConfig) -> Result<AgentStats, AgentError> {
    let handle = Agent::spawn(config)?;
    let stopper = handle.stopper();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            stopper.stop();
        }
    });
    handle.finish(Duration::from_secs(30)).await
}
