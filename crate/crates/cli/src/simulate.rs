//! Deterministic fleets of simulated devices.

use std::str::FromStr;
use std::time::Duration;

use lify_agent::{Agent, AgentConfig, AgentStats, Anomaly, TelemetryEnvelope};
use lify_core::MetricKind;

use crate::error::CliError;

/// An anomaly for one device, or for every device when `device` is `None`.
///
/// Written `[DEVICE:]METRIC=TARGET@START[+DURATION]`, for example
/// `dev-01:temp_c=39.5@10s+30s`. Without a duration the anomaly lasts until
/// the end of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpec {
    pub device: Option<String>,
    pub anomaly: Anomaly,
}

const UNTIL_END_MS: i64 = i64::MAX / 4;

impl FromStr for AnomalySpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| CliError::usage(format!("bad anomaly {s:?}: {why}; expected [DEVICE:]METRIC=TARGET@START[+DURATION]"));
        let (device, rest) = match s.split_once(':') {
            Some((d, r)) => (Some(d.to_string()), r),
            None => (None, s),
        };
        let (metric, rest) = rest.split_once('=').ok_or_else(|| bad("missing '='"))?;
        let metric = MetricKind::from_code(metric.trim()).ok_or_else(|| bad("unknown metric"))?;
        let (target, timing) = rest.split_once('@').ok_or_else(|| bad("missing '@'"))?;
        let target: f64 = target.trim().parse().map_err(|_| bad("target is not a number"))?;
        let (start, duration) = match timing.split_once('+') {
            Some((a, b)) => (a, Some(b)),
            None => (timing, None),
        };
        let ms = |text: &str| -> Result<i64, CliError> {
            let d = humantime::parse_duration(text.trim()).map_err(|e| bad(&e.to_string()))?;
            Ok(d.as_millis() as i64)
        };
        let duration_ms = duration.map(ms).transpose()?.unwrap_or(UNTIL_END_MS);
        if duration_ms <= 0 {
            return Err(bad("duration must be positive"));
        }
        Ok(AnomalySpec { device, anomaly: Anomaly { start_ms: ms(start)?, duration_ms, metric, target } })
    }
}

#[derive(Debug, Clone)]
pub struct FleetOptions {
    /// Broker, TLS and patient baseline shared by every device.
    pub base: AgentConfig,
    pub devices: usize,
    pub period: Duration,
    pub duration: Duration,
    pub seed: u64,
    /// Timestamp of every device's first cycle; now when absent.
    pub start_ts_ms: Option<i64>,
    pub anomalies: Vec<AnomalySpec>,
}

pub fn device_id(i: usize) -> String {
    format!("dev-{:02}", i + 1)
}

pub fn patient_id(i: usize) -> String {
    format!("p-{:03}", i + 1)
}

/// One agent configuration per device: `dev-01` serves `p-001` with seed
/// `seed`, `dev-02` serves `p-002` with `seed + 1`, and so on.
pub fn fleet_configs(opts: &FleetOptions) -> Result<Vec<AgentConfig>, CliError> {
    if opts.devices == 0 {
        return Err(CliError::usage("--devices must be at least 1"));
    }
    let period_ms = opts.period.as_millis() as u64;
    if period_ms == 0 {
        return Err(CliError::usage("--period must be at least 1ms"));
    }
    let cycles = opts.duration.as_millis() as u64 / period_ms;
    if cycles == 0 {
        return Err(CliError::usage("--duration must cover at least one period"));
    }
    let ids: Vec<String> = (0..opts.devices).map(device_id).collect();
    if let Some(a) = opts.anomalies.iter().find(|a| a.device.as_ref().is_some_and(|d| !ids.contains(d))) {
        return Err(CliError::usage(format!("anomaly names unknown device {:?}", a.device.as_ref().unwrap())));
    }
    let start = opts.start_ts_ms.unwrap_or_else(lify_core::now_ms);
    let configs: Vec<AgentConfig> = (0..opts.devices)
        .map(|i| {
            let mut cfg = opts.base.clone();
            cfg.device_id = ids[i].clone();
            cfg.patient_id = patient_id(i);
            cfg.seed = opts.seed.wrapping_add(i as u64);
            cfg.period_ms = period_ms;
            cfg.cycles = Some(cycles);
            cfg.start_ts_ms = Some(start);
            cfg.patient.anomalies.extend(
                opts.anomalies
                    .iter()
                    .filter(|a| a.device.as_ref().map_or(true, |d| *d == cfg.device_id))
                    .map(|a| a.anomaly.clone()),
            );
            cfg
        })
        .collect();
    Ok(configs)
}

/// The envelopes the fleet will publish, device by device.
pub fn replay_fleet(configs: &[AgentConfig]) -> Result<Vec<TelemetryEnvelope>, CliError> {
    let mut all = Vec::new();
    for cfg in configs {
        all.extend(Agent::replay(cfg, cfg.cycles.unwrap_or(0))?);
    }
    Ok(all)
}

/// Runs every device to its cycle limit, then allows `drain` for buffered
/// envelopes to be delivered.
pub async fn run_fleet(configs: Vec<AgentConfig>, drain: Duration) -> Result<Vec<AgentStats>, CliError> {
    let mut handles = Vec::with_capacity(configs.len());
    for cfg in configs {
        handles.push(Agent::spawn(cfg)?);
    }
    let stoppers: Vec<_> = handles.iter().map(|h| h.stopper()).collect();
    let interrupt = tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            stoppers.iter().for_each(|s| s.stop());
        }
    });
    let results = join_in_order(handles.into_iter().map(|h| h.finish(drain)).collect()).await;
    interrupt.abort();
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

async fn join_in_order<F: std::future::Future + Send + 'static>(futs: Vec<F>) -> Vec<F::Output>
where
    F::Output: Send + 'static,
{
    let tasks: Vec<_> = futs.into_iter().map(tokio::spawn).collect();
    let mut out = Vec::with_capacity(tasks.len());
    for t in tasks {
        out.push(t.await.expect("agent task panicked"));
    }
    out
}
