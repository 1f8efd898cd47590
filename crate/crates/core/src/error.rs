use thiserror::Error;

/// Failures of the raw-sample to vital-sign conversions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("temperature sensor reported an error (raw register {0:#06x})")]
    SensorFault(u16),
    #[error("window too short or malformed: {0}")]
    WindowTooShort(String),
    #[error("no pulse detected ({peaks} peaks, need at least 3)")]
    NoPulseDetected { peaks: usize },
    #[error("no usable optical signal: {0}")]
    NoSignal(&'static str),
}
