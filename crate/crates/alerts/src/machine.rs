use lify_core::{Alert, AlertRange, AlertSource, AlertState, Quality, VitalSample};
use serde::{Deserialize, Serialize};

use crate::error::AlertError;
use crate::rule::AlertRule;

/// Debounce and re-arm counters for one (patient, metric).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleState {
    pub consecutive_breaches: u32,
    pub consecutive_normals: u32,
    pub armed: bool,
}

impl Default for RuleState {
    fn default() -> Self {
        Self { consecutive_breaches: 0, consecutive_normals: 0, armed: true }
    }
}

/// Advances the rule state by one sample.
///
/// A fired alert carries an empty `alert_id`; [`crate::AlertStore::insert`]
/// assigns one. The alert's creation time is the sample's timestamp.
pub fn evaluate(
    sample: &VitalSample,
    rule: &AlertRule,
    st: RuleState,
) -> Result<(RuleState, Option<Alert>), AlertError> {
    if sample.metric != rule.metric {
        return Err(AlertError::MetricMismatch { sample: sample.metric, rule: rule.metric });
    }
    if sample.quality == Quality::NoSignal || !sample.value.is_finite() {
        return Ok((st, None));
    }
    let mut next = st;
    if rule.in_range(sample.value) {
        next.consecutive_normals = next.consecutive_normals.saturating_add(1);
        next.consecutive_breaches = 0;
        if !next.armed && next.consecutive_normals >= rule.rearm_m {
            next.armed = true;
        }
        return Ok((next, None));
    }
    next.consecutive_breaches = next.consecutive_breaches.saturating_add(1);
    next.consecutive_normals = 0;
    if next.armed && next.consecutive_breaches >= rule.debounce_n {
        next.armed = false;
        return Ok((next, Some(auto_alert(sample, rule))));
    }
    Ok((next, None))
}

fn auto_alert(sample: &VitalSample, rule: &AlertRule) -> Alert {
    let side = if sample.value > rule.max { "above" } else { "below" };
    let bound = if sample.value > rule.max { rule.max } else { rule.min };
    Alert {
        alert_id: String::new(),
        patient_id: sample.patient_id.clone(),
        metric: Some(rule.metric),
        value: Some(sample.value),
        range: Some(AlertRange { min: rule.min, max: rule.max }),
        message: format!("{} {} {} {side} {bound}", rule.metric.label(), sample.value, rule.metric.unit()),
        source: AlertSource::Auto,
        severity: rule.severity,
        state: AlertState::Open,
        created_ts_ms: sample.ts_ms,
    }
}
