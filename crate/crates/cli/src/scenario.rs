//! Scripted end-to-end runs against an in-process stack with an embedded
//! broker and a mock chat transport.
//!
//! A script is JSON:
//!
//! ```json
//! {
//!   "name": "fever",
//!   "patients": [{ "patient_id": "p-001", "name": "Ana Pérez" }],
//!   "followers": [{ "user_id": "u-1", "chat_id": "100", "patients": ["p-001"] }],
//!   "actions": [
//!     { "at_ms": 0, "action": "start_agent", "device_id": "dev-01", "patient_id": "p-001", "cycles": 30 },
//!     { "at_ms": 10000, "action": "inject_anomaly", "device_id": "dev-01", "metric": "temp_c", "target": 39.5 },
//!     { "at_ms": 10000, "action": "expect_alert", "patient_id": "p-001", "metric": "temp_c",
//!       "not_before_ms": 2000, "within_ms": 5000 },
//!     { "at_ms": 31000, "action": "expect_complete", "within_ms": 10000 }
//!   ]
//! }
//! ```
//!
//! Action times are offsets from the start of the run. Expectation windows
//! are measured from the expectation's own `at_ms`. Patients without rules
//! get the default rules. Anomalies are folded into the named agent's
//! schedule, so they need a `start_agent` for that device at or before
//! their time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use lify_agent::{Agent, AgentConfig, AgentHandle, AgentStats, Anomaly, SimulatedPatientState};
use lify_alerts::{default_rules, AlertFilter, AlertRule};
use lify_core::{now_ms, MetricKind, Severity};
use lify_gateway::{SeriesKey, StoredRecord, TelemetryStore};
use lify_notifier::{
    BindingRegistry, ChatTransport, MockTransport, Recipient, RecipientDirectory, RetryPolicy, ScriptedReply,
    SendResult,
};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;
use tracing::info;

use crate::config::LifyConfig;
use crate::error::CliError;
use crate::stack::{ServeOptions, Services, Stack};

const POLL: Duration = Duration::from_millis(50);
const UNTIL_END_MS: i64 = i64::MAX / 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub patients: Vec<ScenarioPatient>,
    #[serde(default)]
    pub followers: Vec<Follower>,
    /// Replies the mock chat transport gives, per chat, before answering 200.
    #[serde(default)]
    pub chat_replies: BTreeMap<String, Vec<ReplySpec>>,
    #[serde(default)]
    pub retry: Option<RetrySpec>,
    pub actions: Vec<TimedAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPatient {
    pub patient_id: String,
    pub name: String,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub metric: MetricKind,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub debounce_n: Option<u32>,
    #[serde(default)]
    pub rearm_m: Option<u32>,
    #[serde(default)]
    pub severity: Option<Severity>,
}

impl RuleSpec {
    fn to_rule(&self, patient_id: &str) -> AlertRule {
        let mut rule = AlertRule::new(patient_id, self.metric, self.min, self.max);
        if let Some(n) = self.debounce_n {
            rule.debounce_n = n;
        }
        if let Some(m) = self.rearm_m {
            rule.rearm_m = m;
        }
        if let Some(s) = self.severity {
            rule.severity = s;
        }
        rule
    }
}

/// Someone who receives a patient's alerts in a chat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Follower {
    pub user_id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub chat_id: String,
    pub patients: Vec<String>,
    #[serde(default = "yes")]
    pub verified: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySpec {
    Status(u16),
    RateLimited(u64),
    Timeout,
}

impl From<ReplySpec> for ScriptedReply {
    fn from(r: ReplySpec) -> Self {
        match r {
            ReplySpec::Status(s) => ScriptedReply::Status(s),
            ReplySpec::RateLimited(s) => ScriptedReply::RateLimited(s),
            ReplySpec::Timeout => ScriptedReply::Timeout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySpec {
    pub max_retries: u32,
    pub base_ms: u64,
    pub cap_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    StartAgent {
        device_id: String,
        patient_id: String,
        #[serde(default = "default_period_ms")]
        period_ms: u64,
        #[serde(default)]
        seed: u64,
        /// Runs until the scenario ends when absent.
        #[serde(default)]
        cycles: Option<u64>,
        #[serde(default)]
        state: SimulatedPatientState,
    },
    InjectAnomaly {
        device_id: String,
        metric: MetricKind,
        target: f64,
        #[serde(default)]
        duration_ms: Option<i64>,
    },
    BrokerOffline,
    BrokerOnline,
    ExpectAlert {
        patient_id: String,
        #[serde(default)]
        metric: Option<MetricKind>,
        #[serde(default)]
        not_before_ms: u64,
        within_ms: u64,
    },
    /// A message delivered to `chat_id`, or to any chat following the
    /// patient when absent.
    ExpectNotification {
        patient_id: String,
        #[serde(default)]
        chat_id: Option<String>,
        #[serde(default)]
        not_before_ms: u64,
        within_ms: u64,
    },
    /// Storage holds exactly what every finite agent generated: nothing
    /// missing, nothing duplicated, nothing unexpected.
    ExpectComplete { within_ms: u64 },
}

fn default_period_ms() -> u64 {
    1000
}

impl Action {
    fn name(&self) -> &'static str {
        match self {
            Action::StartAgent { .. } => "start_agent",
            Action::InjectAnomaly { .. } => "inject_anomaly",
            Action::BrokerOffline => "broker_offline",
            Action::BrokerOnline => "broker_online",
            Action::ExpectAlert { .. } => "expect_alert",
            Action::ExpectNotification { .. } => "expect_notification",
            Action::ExpectComplete { .. } => "expect_complete",
        }
    }
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let script: Self = serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid scenario: {e}")))?;
        script.validate()?;
        Ok(script)
    }

    /// Actions must be in time order and may only name defined patients and
    /// started devices.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |i: usize, why: String| CliError::usage(format!("scenario action {i}: {why}"));
        let patients: BTreeSet<&str> = self.patients.iter().map(|p| p.patient_id.as_str()).collect();
        if patients.len() != self.patients.len() {
            return Err(CliError::usage("scenario defines a patient twice"));
        }
        for f in &self.followers {
            if let Some(p) = f.patients.iter().find(|p| !patients.contains(p.as_str())) {
                return Err(CliError::usage(format!("follower {} names undefined patient {p}", f.user_id)));
            }
        }
        let mut devices = BTreeSet::new();
        let mut prev = 0;
        for (i, step) in self.actions.iter().enumerate() {
            if step.at_ms < prev {
                return Err(bad(i, format!("at_ms {} is earlier than the previous action", step.at_ms)));
            }
            prev = step.at_ms;
            let patient = match &step.action {
                Action::StartAgent { device_id, patient_id, period_ms, .. } => {
                    if !devices.insert(device_id.as_str()) {
                        return Err(bad(i, format!("device {device_id} is started twice")));
                    }
                    if *period_ms == 0 {
                        return Err(bad(i, "period_ms must be positive".into()));
                    }
                    Some(patient_id)
                }
                Action::InjectAnomaly { device_id, .. } if !devices.contains(device_id.as_str()) => {
                    return Err(bad(i, format!("device {device_id} has not been started")));
                }
                Action::ExpectAlert { patient_id, .. } | Action::ExpectNotification { patient_id, .. } => {
                    Some(patient_id)
                }
                _ => None,
            };
            if let Some(p) = patient.filter(|p| !patients.contains(p.as_str())) {
                return Err(bad(i, format!("patient {p} is not defined")));
            }
            if let Action::ExpectAlert { not_before_ms, within_ms, .. }
            | Action::ExpectNotification { not_before_ms, within_ms, .. } = &step.action
            {
                if not_before_ms > within_ms {
                    return Err(bad(i, "not_before_ms exceeds within_ms".into()));
                }
            }
        }
        Ok(())
    }

    /// Agent configurations with every injected anomaly folded in, keyed by
    /// the index of their `start_agent` action.
    fn agent_plans(&self) -> BTreeMap<usize, AgentConfig> {
        let mut plans = BTreeMap::new();
        let mut by_device = HashMap::new();
        for (i, step) in self.actions.iter().enumerate() {
            match &step.action {
                Action::StartAgent { device_id, patient_id, period_ms, seed, cycles, state } => {
                    let cfg = AgentConfig {
                        device_id: device_id.clone(),
                        patient_id: patient_id.clone(),
                        period_ms: *period_ms,
                        seed: *seed,
                        cycles: *cycles,
                        patient: state.clone(),
                        ..AgentConfig::default()
                    };
                    by_device.insert(device_id.clone(), (i, step.at_ms));
                    plans.insert(i, cfg);
                }
                Action::InjectAnomaly { device_id, metric, target, duration_ms } => {
                    let (start_index, started_at) = by_device[device_id];
                    plans.get_mut(&start_index).expect("validated").patient.anomalies.push(Anomaly {
                        start_ms: (step.at_ms - started_at) as i64,
                        duration_ms: duration_ms.unwrap_or(UNTIL_END_MS),
                        metric: *metric,
                        target: *target,
                    });
                }
                _ => {}
            }
        }
        plans
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioOptions {
    /// Storage root; everything is kept in memory when absent.
    pub data_root: Option<PathBuf>,
    /// Extra time after the last action for agents to drain.
    pub drain: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub index: usize,
    pub at_ms: u64,
    pub action: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Time from the expectation's `at_ms` to the observed event.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_after_ms: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Completeness {
    pub expected: usize,
    pub stored: usize,
    pub missing: usize,
    pub duplicates: usize,
    pub unexpected: usize,
}

impl Completeness {
    pub fn is_exact(&self) -> bool {
        self.missing == 0 && self.duplicates == 0 && self.unexpected == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveredMessage {
    pub ts_ms: i64,
    pub chat_id: String,
    pub outcome: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    /// Wall-clock time of offset 0.
    pub origin_ts_ms: i64,
    pub expectations: Vec<ExpectationResult>,
    pub agents: BTreeMap<String, AgentStats>,
    pub alerts: Vec<lify_core::Alert>,
    pub messages: Vec<DeliveredMessage>,
    pub completeness: Option<Completeness>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.passed)
    }
}

/// Mock transport that timestamps every attempt.
struct TimedTransport {
    inner: MockTransport,
    log: Mutex<Vec<DeliveredMessage>>,
}

#[async_trait]
impl ChatTransport for TimedTransport {
    async fn send(&self, chat_id: &str, text: &str) -> SendResult {
        let result = self.inner.send(chat_id, text).await;
        let outcome = match &result {
            SendResult::Delivered => "delivered".to_string(),
            SendResult::Transient { reason, .. } => format!("transient:{reason}"),
            SendResult::Permanent { reason } => format!("permanent:{reason}"),
        };
        self.log.lock().unwrap().push(DeliveredMessage {
            ts_ms: now_ms(),
            chat_id: chat_id.into(),
            outcome,
            text: text.into(),
        });
        result
    }
}

struct ScriptDirectory {
    patients: HashMap<String, String>,
    followers: Vec<Follower>,
}

impl RecipientDirectory for ScriptDirectory {
    fn patient_name(&self, patient_id: &str) -> Option<String> {
        self.patients.get(patient_id).cloned()
    }

    fn user_name(&self, user_id: &str) -> Option<String> {
        self.followers.iter().find(|f| f.user_id == user_id).and_then(|f| f.display_name.clone())
    }

    fn recipients(&self, patient_id: &str) -> Vec<Recipient> {
        self.followers
            .iter()
            .filter(|f| f.patients.iter().any(|p| p == patient_id))
            .map(|f| Recipient { user_id: f.user_id.clone() })
            .collect()
    }
}

struct Running {
    origin: Instant,
    origin_ts_ms: i64,
    stack: Stack,
    transport: Arc<TimedTransport>,
    script: Arc<ScenarioScript>,
    /// Finite agents and the envelopes they will publish.
    expected: Mutex<Vec<AgentConfig>>,
}

/// Runs `script` to completion and reports every expectation.
pub async fn run_scenario(script: ScenarioScript, opts: ScenarioOptions) -> Result<ScenarioReport, CliError> {
    script.validate()?;
    let mut plans = script.agent_plans();

    let transport = Arc::new(TimedTransport { inner: MockTransport::new(), log: Mutex::new(Vec::new()) });
    for (chat, replies) in &script.chat_replies {
        transport.inner.script(chat, replies.iter().copied().map(ScriptedReply::from));
    }
    let bindings = Arc::new(BindingRegistry::in_memory());
    for f in &script.followers {
        let bound = if f.verified {
            let code = bindings.issue_code(&f.user_id, now_ms());
            bindings.bind(&f.user_id, &f.chat_id, &code.code, now_ms())
        } else {
            bindings.add_unverified(&f.user_id, &f.chat_id)
        };
        bound.map_err(|e| CliError::usage(format!("follower {}: {e}", f.user_id)))?;
    }
    let directory = Arc::new(ScriptDirectory {
        patients: script.patients.iter().map(|p| (p.patient_id.clone(), p.name.clone())).collect(),
        followers: script.followers.clone(),
    });

    let mut config = LifyConfig { data_root: opts.data_root.clone(), ..LifyConfig::default() };
    config.broker.listen = ([127, 0, 0, 1], 0).into();
    let services = Services { gateway: true, alerts: true, notifier: true, api: false };
    let mut serve = ServeOptions::new(config, services);
    serve.embedded_broker = true;
    serve.transport = Some(transport.clone());
    serve.directory = Some(directory);
    serve.bindings = Some(bindings);
    if let Some(r) = script.retry {
        serve.retry_policy = RetryPolicy {
            max_retries: r.max_retries,
            base: Duration::from_millis(r.base_ms),
            cap: Duration::from_millis(r.cap_ms),
        };
    }
    let stack = Stack::start(serve).await?;
    let engine = stack.engine.clone().expect("alerts requested");
    for p in &script.patients {
        let rules = if p.rules.is_empty() {
            default_rules(&p.patient_id)
        } else {
            p.rules.iter().map(|r| r.to_rule(&p.patient_id)).collect()
        };
        engine.put_rules(&p.patient_id, rules)?;
    }
    let broker_url = stack.ready.broker_url.clone().expect("gateway requested");
    let ca_path = stack.ready.ca_path.clone();

    let run = Arc::new(Running {
        origin: Instant::now(),
        origin_ts_ms: now_ms(),
        stack,
        transport,
        script: Arc::new(script),
        expected: Mutex::new(Vec::new()),
    });
    info!(name = %run.script.name, "scenario started");

    let mut agents: Vec<AgentHandle> = Vec::new();
    let mut checks = Vec::new();
    for (i, step) in run.script.actions.iter().enumerate() {
        tokio::time::sleep_until(run.origin + Duration::from_millis(step.at_ms)).await;
        match &step.action {
            Action::StartAgent { .. } => {
                let mut cfg = plans.remove(&i).expect("planned");
                cfg.broker_url = broker_url.clone();
                cfg.ca_path = ca_path.clone();
                cfg.start_ts_ms = Some(run.origin_ts_ms + step.at_ms as i64);
                if cfg.cycles.is_some() {
                    run.expected.lock().unwrap().push(cfg.clone());
                }
                agents.push(Agent::spawn(cfg)?);
            }
            Action::InjectAnomaly { .. } => {}
            Action::BrokerOffline => set_broker(&run, false),
            Action::BrokerOnline => set_broker(&run, true),
            Action::ExpectAlert { .. } | Action::ExpectNotification { .. } | Action::ExpectComplete { .. } => {
                let run = run.clone();
                checks.push(tokio::spawn(async move { check(&run, i).await }));
            }
        }
    }

    let mut expectations = Vec::new();
    let mut completeness = None;
    for c in checks {
        let (result, complete) = c.await.map_err(|e| CliError::runtime(format!("expectation task: {e}")))?;
        expectations.push(result);
        completeness = complete.or(completeness);
    }

    let mut agent_stats = BTreeMap::new();
    for a in agents {
        let id = a.device_id().to_string();
        let stats = if opts.drain.is_zero() { a.stop().await } else { a.finish(opts.drain).await? };
        agent_stats.insert(id, stats);
    }
    let run = Arc::into_inner(run).expect("expectation tasks finished");
    let alerts = run.stack.engine.as_ref().expect("alerts requested").list_alerts(&AlertFilter::default());
    let messages = run.transport.log.lock().unwrap().clone();
    run.stack.shutdown().await;
    Ok(ScenarioReport {
        name: run.script.name.clone(),
        origin_ts_ms: run.origin_ts_ms,
        expectations,
        agents: agent_stats,
        alerts,
        messages,
        completeness,
    })
}

fn set_broker(run: &Running, online: bool) {
    if let Some(b) = &run.stack.broker {
        b.set_online(online);
    }
}

async fn check(run: &Running, index: usize) -> (ExpectationResult, Option<Completeness>) {
    let step = &run.script.actions[index];
    let reference = run.origin_ts_ms + step.at_ms as i64;
    let mut result = ExpectationResult {
        index,
        at_ms: step.at_ms,
        action: step.action.name(),
        passed: false,
        detail: String::new(),
        observed_after_ms: None,
    };
    match &step.action {
        Action::ExpectAlert { patient_id, metric, not_before_ms, within_ms } => {
            let engine = run.stack.engine.as_ref().expect("alerts requested");
            let filter = AlertFilter { patient_id: Some(patient_id.clone()), ..AlertFilter::default() };
            let found = poll_until(run, step.at_ms + within_ms, || {
                engine
                    .list_alerts(&filter)
                    .into_iter()
                    .filter(|a| metric.is_none() || a.metric == *metric)
                    .map(|a| a.created_ts_ms - reference)
                    .filter(|d| *d >= 0)
                    .min()
            })
            .await;
            settle(&mut result, found, *not_before_ms, *within_ms, "alert");
            (result, None)
        }
        Action::ExpectNotification { patient_id, chat_id, not_before_ms, within_ms } => {
            let chats: BTreeSet<String> = match chat_id {
                Some(c) => [c.clone()].into(),
                None => run
                    .script
                    .followers
                    .iter()
                    .filter(|f| f.patients.contains(patient_id))
                    .map(|f| f.chat_id.clone())
                    .collect(),
            };
            let found = poll_until(run, step.at_ms + within_ms, || {
                run.transport
                    .log
                    .lock()
                    .unwrap()
                    .iter()
                    .filter(|m| m.outcome == "delivered" && chats.contains(&m.chat_id))
                    .map(|m| m.ts_ms - reference)
                    .filter(|d| *d >= 0)
                    .min()
            })
            .await;
            settle(&mut result, found, *not_before_ms, *within_ms, "delivered message");
            (result, None)
        }
        Action::ExpectComplete { within_ms } => {
            let configs = run.expected.lock().unwrap().clone();
            let expected = match expected_tuples(&configs) {
                Ok(e) => e,
                Err(e) => {
                    result.detail = e.to_string();
                    return (result, None);
                }
            };
            let store = run.stack.gateway.as_ref().expect("gateway requested").store().clone();
            let mut latest = Completeness::default();
            let done = poll_until(run, step.at_ms + within_ms, || {
                latest = completeness(store.as_ref(), &configs, &expected);
                latest.is_exact().then_some(0)
            })
            .await;
            result.passed = done.is_some();
            result.detail = format!(
                "expected {} stored {} missing {} duplicates {} unexpected {}",
                latest.expected, latest.stored, latest.missing, latest.duplicates, latest.unexpected
            );
            (result, Some(latest))
        }
        _ => unreachable!("only expectations are checked"),
    }
}

fn settle(result: &mut ExpectationResult, found: Option<i64>, not_before_ms: u64, within_ms: u64, what: &str) {
    result.observed_after_ms = found;
    result.passed = found.is_some_and(|d| d >= not_before_ms as i64 && d <= within_ms as i64);
    result.detail = match found {
        Some(d) => format!("{what} after {d} ms, window [{not_before_ms}, {within_ms}] ms"),
        None => format!("no {what} within {within_ms} ms"),
    };
}

/// Polls `probe` until it yields or the offset `deadline_ms` passes.
async fn poll_until<T>(run: &Running, deadline_ms: u64, mut probe: impl FnMut() -> Option<T>) -> Option<T> {
    let deadline = run.origin + Duration::from_millis(deadline_ms);
    loop {
        if let Some(v) = probe() {
            return Some(v);
        }
        if Instant::now() >= deadline {
            return None;
        }
        tokio::time::sleep(POLL).await;
    }
}

type Tuple = (String, i64, MetricKind);

fn expected_tuples(configs: &[AgentConfig]) -> Result<BTreeSet<Tuple>, CliError> {
    let mut set = BTreeSet::new();
    for cfg in configs {
        for env in Agent::replay(cfg, cfg.cycles.unwrap_or(0))? {
            set.extend(env.metrics.keys().map(|m| (env.device_id.clone(), env.ts_ms, *m)));
        }
    }
    Ok(set)
}

/// Compares storage for the agents' patients against the generated tuples.
fn completeness(store: &dyn TelemetryStore, configs: &[AgentConfig], expected: &BTreeSet<Tuple>) -> Completeness {
    let patients: BTreeSet<&str> = configs.iter().map(|c| c.patient_id.as_str()).collect();
    let devices: BTreeSet<&str> = configs.iter().map(|c| c.device_id.as_str()).collect();
    let mut stored: Vec<StoredRecord> = Vec::new();
    for p in patients {
        for m in MetricKind::ALL {
            stored.extend(store.range(&SeriesKey::new(p, m), i64::MIN, i64::MAX));
        }
    }
    stored.retain(|r| devices.contains(r.device_id.as_str()));
    let mut seen = BTreeSet::new();
    let mut report = Completeness { expected: expected.len(), stored: stored.len(), ..Completeness::default() };
    for r in &stored {
        let key = (r.device_id.clone(), r.ts_ms, r.metric);
        if !seen.insert(key.clone()) {
            report.duplicates += 1;
        } else if !expected.contains(&key) {
            report.unexpected += 1;
        }
    }
    report.missing = expected.difference(&seen).count();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
      "name": "fever",
      "patients": [{ "patient_id": "p-001", "name": "Ana Pérez" }],
      "followers": [{ "user_id": "u-1", "chat_id": "100", "patients": ["p-001"] }],
      "actions": [
        { "at_ms": 0, "action": "start_agent", "device_id": "dev-01", "patient_id": "p-001", "cycles": 30 },
        { "at_ms": 10000, "action": "inject_anomaly", "device_id": "dev-01", "metric": "temp_c", "target": 39.5 },
        { "at_ms": 10000, "action": "expect_alert", "patient_id": "p-001", "metric": "temp_c",
          "not_before_ms": 2000, "within_ms": 5000 },
        { "at_ms": 31000, "action": "expect_complete", "within_ms": 10000 }
      ]
    }"#;

    #[test]
    fn documented_example_parses_and_folds_anomalies() {
        let script = ScenarioScript::from_json(EXAMPLE).unwrap();
        let plans = script.agent_plans();
        let cfg = &plans[&0];
        assert_eq!(cfg.cycles, Some(30));
        assert_eq!(
            cfg.patient.anomalies,
            [Anomaly { start_ms: 10_000, duration_ms: UNTIL_END_MS, metric: MetricKind::TempC, target: 39.5 }]
        );
    }

    #[test]
    fn out_of_order_actions_are_rejected() {
        let mut script = ScenarioScript::from_json(EXAMPLE).unwrap();
        script.actions.swap(1, 3);
        assert!(script.validate().unwrap_err().to_string().contains("earlier"));
    }

    #[test]
    fn undefined_patients_and_devices_are_rejected() {
        let mut script = ScenarioScript::from_json(EXAMPLE).unwrap();
        script.actions[2].action = Action::ExpectAlert {
            patient_id: "p-404".into(),
            metric: None,
            not_before_ms: 0,
            within_ms: 1,
        };
        assert!(script.validate().unwrap_err().to_string().contains("p-404"));

        let mut script = ScenarioScript::from_json(EXAMPLE).unwrap();
        script.actions.remove(0);
        assert!(script.validate().unwrap_err().to_string().contains("dev-01"));
    }

    #[test]
    fn reply_specs_map_to_mock_replies() {
        let replies: Vec<ReplySpec> = serde_json::from_str(r#"[{"status":500},{"rate_limited":3},"timeout"]"#).unwrap();
        let mapped: Vec<ScriptedReply> = replies.into_iter().map(Into::into).collect();
        assert_eq!(mapped, [ScriptedReply::Status(500), ScriptedReply::RateLimited(3), ScriptedReply::Timeout]);
    }

    #[test]
    fn completeness_counts_missing_duplicate_and_unexpected() {
        let store = lify_gateway::MemoryStore::new();
        let cfg = AgentConfig {
            device_id: "dev-01".into(),
            patient_id: "p-001".into(),
            start_ts_ms: Some(1_700_000_000_000),
            cycles: Some(3),
            ..AgentConfig::default()
        };
        let configs = vec![cfg];
        let expected = expected_tuples(&configs).unwrap();
        let record = |ts: i64, metric: MetricKind| StoredRecord {
            patient_id: "p-001".into(),
            metric,
            ts_ms: ts,
            value: 1.0,
            quality: lify_core::Quality::Ok,
            device_id: "dev-01".into(),
        };
        let all: Vec<_> = expected.iter().map(|(_, ts, m)| record(*ts, *m)).collect();
        store.append(all[1..].to_vec()).unwrap();
        store.append(vec![record(42, MetricKind::HrBpm)]).unwrap();
        let c = completeness(&store, &configs, &expected);
        assert_eq!((c.missing, c.duplicates, c.unexpected), (1, 0, 1));
        assert!(!c.is_exact());
    }
}
