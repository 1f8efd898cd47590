use lify_core::{MetricKind, Severity};
use serde::{Deserialize, Serialize};

use crate::error::AlertError;

pub const MAX_MANUAL_MESSAGE_CHARS: usize = 500;

/// In-range band for one metric of one patient. Bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRule {
    pub rule_id: String,
    pub patient_id: String,
    pub metric: MetricKind,
    pub min: f64,
    pub max: f64,
    pub debounce_n: u32,
    pub rearm_m: u32,
    pub severity: Severity,
    pub enabled: bool,
}

impl AlertRule {
    pub fn new(patient_id: impl Into<String>, metric: MetricKind, min: f64, max: f64) -> Self {
        let patient_id = patient_id.into();
        Self {
            rule_id: format!("{patient_id}:{}", metric.code()),
            patient_id,
            metric,
            min,
            max,
            debounce_n: 3,
            rearm_m: 5,
            severity: Severity::Warning,
            enabled: true,
        }
    }

    pub fn in_range(&self, value: f64) -> bool {
        self.min <= value && value <= self.max
    }

    pub fn validate(&self) -> Result<(), AlertError> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(AlertError::Validation("rule bounds must be finite numbers".into()));
        }
        if self.min >= self.max {
            return Err(AlertError::Validation(format!(
                "rule for {} needs min < max, got min={} max={}",
                self.metric, self.min, self.max
            )));
        }
        if self.debounce_n < 1 || self.rearm_m < 1 {
            return Err(AlertError::Validation("debounce_n and rearm_m must be at least 1".into()));
        }
        if self.patient_id.is_empty() {
            return Err(AlertError::Validation("rule needs a patient_id".into()));
        }
        Ok(())
    }
}

/// Starting rules for a new patient: temperature 35–38 °C, heart rate
/// 50–110 bpm, SpO2 92–100 %, debounce 3, re-arm 5, warning severity.
/// Configuration defaults, not clinical guidance.
pub fn default_rules(patient_id: &str) -> Vec<AlertRule> {
    vec![
        AlertRule::new(patient_id, MetricKind::TempC, 35.0, 38.0),
        AlertRule::new(patient_id, MetricKind::HrBpm, 50.0, 110.0),
        AlertRule::new(patient_id, MetricKind::Spo2Pct, 92.0, 100.0),
    ]
}
