use bytes::Bytes;
use lify_core::TelemetryEnvelope;
use lify_mqtt::{MqttError, QoS, Session};
use thiserror::Error;

pub const MAX_PAYLOAD_BYTES: usize = 4096;
/// Subscription filter covering every device's telemetry topic.
pub const TELEMETRY_FILTER: &str = "lify/v1/telemetry/+";

pub fn telemetry_topic(device_id: &str) -> String {
    format!("lify/v1/telemetry/{device_id}")
}

#[derive(Debug, Error)]
pub enum PublishError {
    /// The session is unusable; the envelope stays buffered for retry.
    #[error("not connected: {0}")]
    NotConnected(#[source] MqttError),
    #[error("serialized envelope is {0} bytes, limit is 4096")]
    PayloadTooLarge(usize),
}

/// Publishes one envelope at QoS 1 and returns once the broker has
/// acknowledged it.
pub async fn publish(env: &TelemetryEnvelope, session: &mut Session) -> Result<(), PublishError> {
    let payload = env.to_json();
    if payload.len() > MAX_PAYLOAD_BYTES {
        return Err(PublishError::PayloadTooLarge(payload.len()));
    }
    session
        .publish(&telemetry_topic(&env.device_id), Bytes::from(payload), QoS::AtLeastOnce)
        .await
        .map_err(PublishError::NotConnected)
}
