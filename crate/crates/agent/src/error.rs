use thiserror::Error;

use lify_mqtt::MqttError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid synthesis target: {0}")]
    InvalidTarget(String),
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("fatal broker error: {0}")]
    Fatal(#[from] MqttError),
}
