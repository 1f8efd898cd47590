use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<lify_gateway::GatewayError> for CliError {
    fn from(e: lify_gateway::GatewayError) -> Self {
        use lify_gateway::GatewayError as G;
        match e {
            G::Config(_) | G::Mqtt(lify_mqtt::MqttError::BadUrl(..)) => CliError::usage(e),
            _ => CliError::runtime(e),
        }
    }
}

impl From<lify_api::ServerError> for CliError {
    fn from(e: lify_api::ServerError) -> Self {
        use lify_api::ServerError as S;
        match e {
            S::Config(_) => CliError::usage(e),
            _ => CliError::runtime(e),
        }
    }
}

impl From<lify_agent::AgentError> for CliError {
    fn from(e: lify_agent::AgentError) -> Self {
        use lify_agent::AgentError as A;
        match e {
            A::InvalidConfig(_) | A::InvalidTarget(_) => CliError::usage(e),
            _ => CliError::runtime(e),
        }
    }
}

impl From<lify_alerts::AlertError> for CliError {
    fn from(e: lify_alerts::AlertError) -> Self {
        CliError::runtime(e)
    }
}
