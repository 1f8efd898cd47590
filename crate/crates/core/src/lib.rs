//! Domain types shared by every LIFY service, and the signal processing that
//! turns raw optical and infrared sensor samples into body temperature,
//! heart rate and blood oxygen readings.

pub mod alert;
pub mod auth;
pub mod clock;
pub mod envelope;
pub mod error;
pub mod metric;
pub mod ppg;
pub mod sample;
pub mod temperature;

pub use alert::{Alert, AlertRange, AlertSource, AlertState, Severity};
pub use auth::{Principal, Role};
pub use clock::{Clock, ManualClock, SystemClock};
pub use envelope::{EnvelopeError, TelemetryEnvelope, ENVELOPE_VERSION};
pub use error::SignalError;
pub use metric::{MetricKind, Quality};
pub use ppg::{estimate_heart_rate, estimate_spo2, PpgWindow, Spo2Estimate};
pub use sample::{validate_sample, VitalSample};
pub use temperature::{celsius_to_raw, raw_to_celsius, RawTempReading};

/// Milliseconds since the Unix epoch, UTC.
pub fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Identifiers that are safe as file names and topic levels: 1 to 64 ASCII
/// letters, digits, `.`, `_` or `-`, not starting with `.`.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}
