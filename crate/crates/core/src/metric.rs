use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three vitals a bedside device reports.
///
/// The string codes are wire identifiers and must never change. The unit is
/// implied by the code: °C, beats per minute, and percent saturation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "temp_c")]
    TempC,
    #[serde(rename = "hr_bpm")]
    HrBpm,
    #[serde(rename = "spo2_pct")]
    Spo2Pct,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::TempC, MetricKind::HrBpm, MetricKind::Spo2Pct];

    pub fn code(self) -> &'static str {
        match self {
            MetricKind::TempC => "temp_c",
            MetricKind::HrBpm => "hr_bpm",
            MetricKind::Spo2Pct => "spo2_pct",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "temp_c" => Some(MetricKind::TempC),
            "hr_bpm" => Some(MetricKind::HrBpm),
            "spo2_pct" => Some(MetricKind::Spo2Pct),
            _ => None,
        }
    }

    /// Physiologically plausible range for a trusted reading, inclusive.
    pub fn plausible_range(self) -> (f64, f64) {
        match self {
            MetricKind::TempC => (25.0, 45.0),
            MetricKind::HrBpm => (20.0, 250.0),
            MetricKind::Spo2Pct => (70.0, 100.0),
        }
    }

    /// Human label used in notifications.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::TempC => "temperature",
            MetricKind::HrBpm => "heart rate",
            MetricKind::Spo2Pct => "SpO2",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricKind::TempC => "°C",
            MetricKind::HrBpm => "bpm",
            MetricKind::Spo2Pct => "%",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::from_code(s).ok_or_else(|| format!("unknown metric code {s:?}"))
    }
}

/// Per-value trust marker carried end to end.
///
/// Ordered from best to worst so `max` picks the worst of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Ok,
    Suspect,
    NoSignal,
}

impl Quality {
    pub fn code(self) -> &'static str {
        match self {
            Quality::Ok => "ok",
            Quality::Suspect => "suspect",
            Quality::NoSignal => "no_signal",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "ok" => Some(Quality::Ok),
            "suspect" => Some(Quality::Suspect),
            "no_signal" => Some(Quality::NoSignal),
            _ => None,
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}
