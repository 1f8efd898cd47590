use thiserror::Error;

#[derive(Debug, Error)]
pub enum MqttError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("tls: {0}")]
    Tls(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("broker refused connection (return code {0})")]
    ConnectionRefused(u8),
    #[error("plaintext endpoint {0} refused: TLS is required")]
    PlaintextRefused(String),
    #[error("bad broker url {0:?}: {1}")]
    BadUrl(String, String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
}

impl MqttError {
    /// Errors that retrying cannot fix: bad configuration or an untrusted peer.
    pub fn is_fatal(&self) -> bool {
        matches!(self, MqttError::Tls(_) | MqttError::PlaintextRefused(_) | MqttError::BadUrl(..))
    }
}
