use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use lify_core::{validate_sample, Clock, EnvelopeError, TelemetryEnvelope};
use serde::Serialize;
use tracing::{debug, warn};

use crate::bus::{BusEvent, EventBus};
use crate::dedup::DedupIndex;
use crate::storage::{StoredRecord, TelemetryStore};

/// How far ahead of the gateway clock an envelope timestamp may be.
pub const FUTURE_TOLERANCE_MS: i64 = 24 * 60 * 60 * 1000;

pub const TELEMETRY_PREFIX: &str = "lify/v1/telemetry/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadJson,
    Schema,
    UnknownMetric,
    FutureTs,
    TopicMismatch,
    Storage,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::BadJson => "bad_json",
            RejectReason::Schema => "schema",
            RejectReason::UnknownMetric => "unknown_metric",
            RejectReason::FutureTs => "future_ts",
            RejectReason::TopicMismatch => "topic_mismatch",
            RejectReason::Storage => "storage",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl From<&EnvelopeError> for RejectReason {
    fn from(e: &EnvelopeError) -> Self {
        match e {
            EnvelopeError::BadJson(_) => RejectReason::BadJson,
            EnvelopeError::Schema(_) => RejectReason::Schema,
            EnvelopeError::UnknownMetric(_) => RejectReason::UnknownMetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted { records: usize },
    Duplicate,
    Rejected(RejectReason),
}

impl IngestOutcome {
    /// Whether the broker may forget the message. Only storage failures ask
    /// for redelivery.
    pub fn should_ack(&self) -> bool {
        !matches!(self, IngestOutcome::Rejected(RejectReason::Storage))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub received: u64,
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub rejected_by_reason: BTreeMap<RejectReason, u64>,
    pub records: u64,
    pub last_ts: BTreeMap<String, i64>,
}

impl IngestStats {
    pub fn is_conserved(&self) -> bool {
        self.received == self.accepted + self.duplicates + self.rejected
    }
}

/// Validates, deduplicates, stores and publishes telemetry envelopes.
pub struct Gateway {
    store: Arc<dyn TelemetryStore>,
    bus: EventBus,
    clock: Arc<dyn Clock>,
    dedup: Mutex<DedupIndex>,
    device_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    stats: Mutex<IngestStats>,
}

impl Gateway {
    pub fn new(store: Arc<dyn TelemetryStore>, bus: EventBus, clock: Arc<dyn Clock>, dedup_capacity: usize) -> Self {
        Self {
            store,
            bus,
            clock,
            dedup: Mutex::new(DedupIndex::new(dedup_capacity)),
            device_locks: Mutex::new(HashMap::new()),
            stats: Mutex::new(IngestStats::default()),
        }
    }

    pub fn store(&self) -> &Arc<dyn TelemetryStore> {
        &self.store
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn stats(&self) -> IngestStats {
        self.stats.lock().unwrap().clone()
    }

    /// Handles one MQTT message. Total over arbitrary input.
    pub fn on_message(&self, topic: &str, payload: &[u8]) -> IngestOutcome {
        let (outcome, device) = match self.check(topic, payload) {
            Ok(env) => {
                let outcome = self.ingest(&env);
                (outcome, Some((env.device_id, env.ts_ms)))
            }
            Err(reason) => (IngestOutcome::Rejected(reason), None),
        };

        let mut stats = self.stats.lock().unwrap();
        stats.received += 1;
        match outcome {
            IngestOutcome::Accepted { records } => {
                stats.accepted += 1;
                stats.records += records as u64;
            }
            IngestOutcome::Duplicate => stats.duplicates += 1,
            IngestOutcome::Rejected(reason) => {
                stats.rejected += 1;
                *stats.rejected_by_reason.entry(reason).or_default() += 1;
            }
        }
        if let (IngestOutcome::Accepted { .. }, Some((dev, ts))) = (outcome, device) {
            let last = stats.last_ts.entry(dev).or_insert(ts);
            *last = (*last).max(ts);
        }
        outcome
    }

    fn check(&self, topic: &str, payload: &[u8]) -> Result<TelemetryEnvelope, RejectReason> {
        let env = TelemetryEnvelope::from_json(payload).map_err(|e| {
            debug!(topic, error = %e, "envelope rejected");
            RejectReason::from(&e)
        })?;
        if topic.strip_prefix(TELEMETRY_PREFIX) != Some(env.device_id.as_str()) {
            warn!(topic, device_id = %env.device_id, "topic does not match device_id");
            return Err(RejectReason::TopicMismatch);
        }
        if !lify_core::is_safe_id(&env.device_id) || !lify_core::is_safe_id(&env.patient_id) {
            return Err(RejectReason::Schema);
        }
        if env.ts_ms > self.clock.now_ms() + FUTURE_TOLERANCE_MS {
            return Err(RejectReason::FutureTs);
        }
        Ok(env)
    }

    fn device_lock(&self, device_id: &str) -> Arc<Mutex<()>> {
        self.device_locks.lock().unwrap().entry(device_id.to_string()).or_default().clone()
    }

    fn ingest(&self, env: &TelemetryEnvelope) -> IngestOutcome {
        let lock = self.device_lock(&env.device_id);
        let _serial = lock.lock().unwrap();

        let samples = env.samples();
        let offered = samples.len();
        let fresh: Vec<StoredRecord> = {
            let mut dedup = self.dedup.lock().unwrap();
            samples
                .into_iter()
                .filter(|s| !dedup.contains(&s.device_id, s.ts_ms, s.metric))
                .filter(|s| !self.store.contains(&s.device_id, s.ts_ms, s.metric))
                .map(validate_sample)
                .map(|s| StoredRecord {
                    patient_id: s.patient_id,
                    metric: s.metric,
                    ts_ms: s.ts_ms,
                    value: s.value,
                    quality: s.quality,
                    device_id: s.device_id,
                })
                .collect()
        };
        if offered > 0 && fresh.is_empty() {
            return IngestOutcome::Duplicate;
        }

        let stored = match self.store.append(fresh) {
            Ok(stored) => stored,
            Err(e) => {
                warn!(device_id = %env.device_id, error = %e, "storage append failed");
                return IngestOutcome::Rejected(RejectReason::Storage);
            }
        };
        {
            let mut dedup = self.dedup.lock().unwrap();
            for r in &stored {
                dedup.insert(&r.device_id, r.ts_ms, r.metric);
            }
        }
        for r in &stored {
            self.bus.publish(BusEvent::Sample(lify_core::VitalSample {
                patient_id: r.patient_id.clone(),
                device_id: r.device_id.clone(),
                metric: r.metric,
                value: r.value,
                ts_ms: r.ts_ms,
                quality: r.quality,
            }));
        }
        if offered > 0 && stored.is_empty() {
            // Lost a race with a concurrent delivery of the same keys.
            return IngestOutcome::Duplicate;
        }
        IngestOutcome::Accepted { records: stored.len() }
    }
}
