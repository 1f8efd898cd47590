use serde::{Deserialize, Serialize};

use crate::metric::{MetricKind, Quality};

/// One timestamped reading of one metric for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub patient_id: String,
    pub device_id: String,
    pub metric: MetricKind,
    pub value: f64,
    pub ts_ms: i64,
    pub quality: Quality,
}

impl VitalSample {
    pub fn new(
        patient_id: impl Into<String>,
        device_id: impl Into<String>,
        metric: MetricKind,
        value: f64,
        ts_ms: i64,
    ) -> Self {
        Self {
            patient_id: patient_id.into(),
            device_id: device_id.into(),
            metric,
            value,
            ts_ms,
            quality: Quality::Ok,
        }
    }

    pub fn with_quality(mut self, quality: Quality) -> Self {
        self.quality = quality;
        self
    }
}

/// Downgrades the quality of implausible readings.
///
/// Non-finite values become `NoSignal`; finite values outside the metric's
/// physiological range become `Suspect`. Quality is never upgraded.
pub fn validate_sample(mut sample: VitalSample) -> VitalSample {
    let judged = if !sample.value.is_finite() {
        Quality::NoSignal
    } else {
        let (lo, hi) = sample.metric.plausible_range();
        if (lo..=hi).contains(&sample.value) {
            Quality::Ok
        } else {
            Quality::Suspect
        }
    };
    sample.quality = sample.quality.max(judged);
    sample
}
