//! The shared TOML configuration file.
//!
//! ```toml
//! data_root = "/var/lib/lify"
//!
//! [gateway]
//! broker_url = "mqtts://127.0.0.1:8883"
//! ca_path = "certs/ca.pem"
//!
//! [api]
//! listen = "0.0.0.0:8443"
//! tls_cert = "certs/api.pem"
//! tls_key = "certs/api.key"
//!
//! [broker]
//! listen = "127.0.0.1:8883"
//!
//! [notifier]
//! api_base = "https://api.telegram.org"
//!
//! [agent]
//! device_id = "dev-01"
//! patient_id = "p-001"
//! ```
//!
//! Every section is optional. Command-line flags override the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use lify_agent::AgentConfig;
use lify_api::ApiConfig;
use lify_gateway::GatewayConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifyConfig {
    /// Root for every service's files; each uses its own subdirectory.
    pub data_root: Option<PathBuf>,
    pub profile: Profile,
    pub gateway: GatewayConfig,
    pub api: ApiConfig,
    pub broker: BrokerSection,
    pub notifier: NotifierSection,
    pub agent: AgentConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// API TLS optional.
    #[default]
    Dev,
    /// API TLS required.
    Prod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerSection {
    pub listen: SocketAddr,
    /// Server identity; a development CA is generated when both are absent.
    pub tls_cert: Option<PathBuf>,
    pub tls_key: Option<PathBuf>,
    /// Serve plaintext MQTT. For tests of the TLS gate only.
    pub plaintext: bool,
}

impl Default for BrokerSection {
    fn default() -> Self {
        Self { listen: SocketAddr::from(([127, 0, 0, 1], 8883)), tls_cert: None, tls_key: None, plaintext: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotifierSection {
    pub api_base: String,
    /// Environment variable holding the bot token.
    pub token_env: String,
    pub timeout_ms: u64,
}

impl Default for NotifierSection {
    fn default() -> Self {
        Self {
            api_base: lify_notifier::HttpTransport::DEFAULT_API_BASE.into(),
            token_env: "LIFY_BOT_TOKEN".into(),
            timeout_ms: 10_000,
        }
    }
}

impl LifyConfig {
    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let text = r#"
            data_root = "/var/lib/lify"
            profile = "prod"

            [gateway]
            broker_url = "mqtts://127.0.0.1:8883"
            ca_path = "certs/ca.pem"

            [api]
            listen = "0.0.0.0:8443"
            tls_cert = "certs/api.pem"
            tls_key = "certs/api.key"

            [broker]
            listen = "127.0.0.1:8883"

            [agent]
            device_id = "dev-07"
            patient_id = "p-007"

            [[agent.patient.anomalies]]
            start_ms = 10000
            duration_ms = 30000
            metric = "temp_c"
            target = 39.5
        "#;
        let cfg: LifyConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.profile, Profile::Prod);
        assert_eq!(cfg.api.listen.port(), 8443);
        assert_eq!(cfg.agent.device_id, "dev-07");
        assert_eq!(cfg.agent.patient.anomalies.len(), 1);
        assert!(cfg.gateway.tls_required);
        assert_eq!(cfg.notifier.token_env, "LIFY_BOT_TOKEN");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<LifyConfig>("[gateway]\nbrokr_url = \"x\"").is_err());
    }

    #[test]
    fn missing_file_is_a_usage_error_naming_it() {
        let err = LifyConfig::load(Some(Path::new("/nope/lify.toml"))).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
        assert!(err.to_string().contains("/nope/lify.toml"));
    }
}
