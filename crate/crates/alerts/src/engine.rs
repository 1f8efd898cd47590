use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use lify_core::{Alert, AlertSource, AlertState, Clock, MetricKind, Principal, Severity, VitalSample};
use lify_gateway::{BusEvent, BusMessage, EventBus};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::{broadcast, mpsc, watch};
use tracing::{error, info, warn};

use crate::error::AlertError;
use crate::machine::{evaluate, RuleState};
use crate::rule::{AlertRule, MAX_MANUAL_MESSAGE_CHARS};
use crate::rulebook::RuleBook;
use crate::store::{AlertFilter, AlertStore};

pub const NOTIFY_QUEUE_CAPACITY: usize = 1024;

/// Rule evaluation plus the alert lifecycle, shared by the bus consumer and
/// the API.
pub struct AlertEngine {
    rules: Arc<RuleBook>,
    store: Arc<AlertStore>,
    states: Mutex<HashMap<(String, MetricKind), RuleState>>,
    bus: EventBus,
    notify: Option<mpsc::Sender<Alert>>,
    clock: Arc<dyn Clock>,
    notify_dropped: AtomicU64,
}

impl AlertEngine {
    pub fn new(rules: Arc<RuleBook>, store: Arc<AlertStore>, bus: EventBus, clock: Arc<dyn Clock>) -> Self {
        Self {
            rules,
            store,
            states: Mutex::new(HashMap::new()),
            bus,
            notify: None,
            clock,
            notify_dropped: AtomicU64::new(0),
        }
    }

    /// Forwards every new alert to `tx` without waiting; alerts are dropped
    /// (and counted) when the queue is full.
    pub fn with_notifier(mut self, tx: mpsc::Sender<Alert>) -> Self {
        self.notify = Some(tx);
        self
    }

    pub fn rules(&self) -> &Arc<RuleBook> {
        &self.rules
    }

    pub fn store(&self) -> &Arc<AlertStore> {
        &self.store
    }

    pub fn notifications_dropped(&self) -> u64 {
        self.notify_dropped.load(Ordering::Relaxed)
    }

    /// Replaces rules for a patient. Counters carry over, so the change
    /// applies from the next sample on.
    pub fn put_rules(&self, patient_id: &str, rules: Vec<AlertRule>) -> Result<Vec<AlertRule>, AlertError> {
        self.rules.put(patient_id, rules)
    }

    pub fn rule_state(&self, patient_id: &str, metric: MetricKind) -> RuleState {
        self.states.lock().unwrap().get(&(patient_id.to_string(), metric)).copied().unwrap_or_default()
    }

    /// Evaluates one accepted sample and persists and announces an alert if
    /// its rule fires.
    pub fn on_sample(&self, sample: &VitalSample) -> Result<Option<Alert>, AlertError> {
        let Some(rule) = self.rules.active(&sample.patient_id, sample.metric) else {
            return Ok(None);
        };
        let fired = {
            let mut states = self.states.lock().unwrap();
            let st = states.entry((sample.patient_id.clone(), sample.metric)).or_default();
            let (next, fired) = evaluate(sample, &rule, *st)?;
            *st = next;
            fired
        };
        match fired {
            Some(alert) => {
                let alert = self.store.insert(alert)?;
                info!(alert_id = %alert.alert_id, patient_id = %alert.patient_id, metric = %sample.metric, value = sample.value, "alert fired");
                self.announce(&alert, true);
                Ok(Some(alert))
            }
            None => Ok(None),
        }
    }

    pub fn trigger_manual(
        &self,
        user: &Principal,
        patient_id: &str,
        message: &str,
        severity: Severity,
    ) -> Result<Alert, AlertError> {
        if !user.role.is_caregiver() {
            return Err(AlertError::Forbidden);
        }
        let message = message.trim();
        if message.is_empty() {
            return Err(AlertError::Validation("message must not be empty".into()));
        }
        let chars = message.chars().count();
        if chars > MAX_MANUAL_MESSAGE_CHARS {
            return Err(AlertError::Validation(format!(
                "message is {chars} characters; the limit is {MAX_MANUAL_MESSAGE_CHARS}"
            )));
        }
        if severity < Severity::Warning {
            return Err(AlertError::Validation("manual alerts must be warning or critical".into()));
        }
        let alert = self.store.insert(Alert {
            alert_id: String::new(),
            patient_id: patient_id.to_string(),
            metric: None,
            value: None,
            range: None,
            message: message.to_string(),
            source: AlertSource::Manual { user_id: user.user_id.clone() },
            severity,
            state: AlertState::Open,
            created_ts_ms: self.clock.now_ms(),
        })?;
        info!(alert_id = %alert.alert_id, %patient_id, user_id = %user.user_id, "manual alert raised");
        self.announce(&alert, true);
        Ok(alert)
    }

    pub fn acknowledge(&self, user: &Principal, alert_id: &str) -> Result<Alert, AlertError> {
        if !user.role.is_caregiver() {
            return Err(AlertError::Forbidden);
        }
        let alert = self.store.acknowledge(alert_id, &user.user_id, self.clock.now_ms())?;
        self.announce(&alert, false);
        Ok(alert)
    }

    pub fn list_alerts(&self, filter: &AlertFilter) -> Vec<Alert> {
        self.store.list(filter)
    }

    fn announce(&self, alert: &Alert, notify: bool) {
        self.bus.publish(BusEvent::Alert(alert.clone()));
        if !notify {
            return;
        }
        if let Some(tx) = &self.notify {
            if tx.try_send(alert.clone()).is_err() {
                self.notify_dropped.fetch_add(1, Ordering::Relaxed);
                warn!(alert_id = %alert.alert_id, "notification queue full or closed, alert not forwarded");
            }
        }
    }

    /// Consumes samples from the bus until `shutdown` turns true.
    pub async fn run(self: Arc<Self>, mut rx: broadcast::Receiver<BusMessage>, mut shutdown: watch::Receiver<bool>) {
        loop {
            let msg = tokio::select! {
                m = rx.recv() => m,
                _ = shutdown.wait_for(|s| *s) => return,
            };
            match msg {
                Ok(BusMessage { event: BusEvent::Sample(sample), .. }) => {
                    if let Err(e) = self.on_sample(&sample) {
                        error!(error = %e, patient_id = %sample.patient_id, "alert evaluation failed");
                    }
                }
                Ok(_) => {}
                Err(RecvError::Lagged(n)) => warn!(missed = n, "alert engine fell behind the event bus"),
                Err(RecvError::Closed) => return,
            }
        }
    }
}
