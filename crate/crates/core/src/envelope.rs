//! The per-cycle record a bedside device publishes.
//!
//! Wire form is UTF-8 JSON with exactly the struct's field names, e.g.
//! `{"v":1,"device_id":"dev-01","patient_id":"p-001","ts_ms":1700000000123,
//! "metrics":{"temp_c":36.8},"quality":{"temp_c":"ok"}}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{MetricKind, Quality};
use crate::sample::VitalSample;

pub const ENVELOPE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEnvelope {
    pub v: u32,
    pub device_id: String,
    pub patient_id: String,
    pub ts_ms: i64,
    pub metrics: BTreeMap<MetricKind, f64>,
    pub quality: BTreeMap<MetricKind, Quality>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("payload is not JSON: {0}")]
    BadJson(String),
    #[error("envelope schema violation: {0}")]
    Schema(String),
    #[error("unknown metric code {0:?}")]
    UnknownMetric(String),
}

impl EnvelopeError {
    /// Stable reason code used in ingest outcomes.
    pub fn reason_code(&self) -> &'static str {
        match self {
            EnvelopeError::BadJson(_) => "bad_json",
            EnvelopeError::Schema(_) => "schema",
            EnvelopeError::UnknownMetric(_) => "unknown_metric",
        }
    }
}

// Loosely typed mirror used to tell unknown metric codes apart from other
// schema problems.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEnvelope {
    v: u32,
    device_id: String,
    patient_id: String,
    ts_ms: i64,
    metrics: BTreeMap<String, f64>,
    quality: BTreeMap<String, String>,
}

impl TelemetryEnvelope {
    pub fn new(device_id: impl Into<String>, patient_id: impl Into<String>, ts_ms: i64) -> Self {
        Self {
            v: ENVELOPE_VERSION,
            device_id: device_id.into(),
            patient_id: patient_id.into(),
            ts_ms,
            metrics: BTreeMap::new(),
            quality: BTreeMap::new(),
        }
    }

    /// Records a value with its quality.
    pub fn insert(&mut self, metric: MetricKind, value: f64, quality: Quality) {
        self.metrics.insert(metric, value);
        self.quality.insert(metric, quality);
    }

    /// Records that a metric was attempted but produced no value.
    pub fn mark_missing(&mut self, metric: MetricKind) {
        self.metrics.remove(&metric);
        self.quality.insert(metric, Quality::NoSignal);
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        if self.v != ENVELOPE_VERSION {
            return Err(EnvelopeError::Schema(format!("unsupported version {}", self.v)));
        }
        if self.device_id.is_empty() || self.patient_id.is_empty() {
            return Err(EnvelopeError::Schema("empty device_id or patient_id".into()));
        }
        if self.ts_ms <= 0 {
            return Err(EnvelopeError::Schema(format!("ts_ms must be positive, got {}", self.ts_ms)));
        }
        if let Some(m) = self.metrics.keys().find(|m| !self.quality.contains_key(m)) {
            return Err(EnvelopeError::Schema(format!("metric {m} has no quality entry")));
        }
        if let Some((m, _)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(EnvelopeError::Schema(format!("metric {m} is not finite")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serialization is infallible")
    }

    /// Parses and validates a wire payload.
    pub fn from_json(payload: &[u8]) -> Result<Self, EnvelopeError> {
        let value: serde_json::Value =
            serde_json::from_slice(payload).map_err(|e| EnvelopeError::BadJson(e.to_string()))?;
        let wire: WireEnvelope =
            serde_json::from_value(value).map_err(|e| EnvelopeError::Schema(e.to_string()))?;

        let code = |c: &str| MetricKind::from_code(c).ok_or_else(|| EnvelopeError::UnknownMetric(c.to_string()));
        let mut metrics = BTreeMap::new();
        for (k, v) in &wire.metrics {
            metrics.insert(code(k)?, *v);
        }
        let mut quality = BTreeMap::new();
        for (k, q) in &wire.quality {
            let q = Quality::from_code(q)
                .ok_or_else(|| EnvelopeError::Schema(format!("unknown quality code {q:?}")))?;
            quality.insert(code(k)?, q);
        }
        let env = TelemetryEnvelope {
            v: wire.v,
            device_id: wire.device_id,
            patient_id: wire.patient_id,
            ts_ms: wire.ts_ms,
            metrics,
            quality,
        };
        env.validate()?;
        Ok(env)
    }

    /// One sample per metric that carries a value.
    pub fn samples(&self) -> Vec<VitalSample> {
        self.metrics
            .iter()
            .map(|(&metric, &value)| VitalSample {
                patient_id: self.patient_id.clone(),
                device_id: self.device_id.clone(),
                metric,
                value,
                ts_ms: self.ts_ms,
                quality: self.quality.get(&metric).copied().unwrap_or(Quality::Ok),
            })
            .collect()
    }
}
