use std::path::PathBuf;

use lify_mqtt::BrokerUrl;
use serde::{Deserialize, Serialize};

use crate::error::AgentError;
use crate::simulator::SimulatedPatientState;

pub const DEFAULT_PERIOD_MS: u64 = 1000;
pub const DEFAULT_BUFFER_CAPACITY: usize = 1024;

/// Device agent settings, the `[agent]` section of the config file.
///
/// ```toml
/// [agent]
/// broker_url = "mqtts://127.0.0.1:8883"
/// ca_path = "certs/ca.pem"
/// device_id = "dev-01"
/// patient_id = "p-001"
/// period_ms = 1000
/// seed = 7
///
/// [[agent.patient.anomalies]]
/// start_ms = 10000
/// duration_ms = 30000
/// metric = "temp_c"
/// target = 39.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub broker_url: String,
    pub tls_required: bool,
    pub ca_path: Option<PathBuf>,
    pub device_id: String,
    pub patient_id: String,
    pub period_ms: u64,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub keep_alive_s: u16,
    /// Timestamp of the first cycle; defaults to the wall clock at start.
    pub start_ts_ms: Option<i64>,
    /// Stop acquiring after this many cycles; run forever when absent.
    pub cycles: Option<u64>,
    pub patient: SimulatedPatientState,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            broker_url: "mqtts://127.0.0.1:8883".into(),
            tls_required: true,
            ca_path: None,
            device_id: "dev-01".into(),
            patient_id: "p-001".into(),
            period_ms: DEFAULT_PERIOD_MS,
            seed: 1,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            keep_alive_s: 30,
            start_ts_ms: None,
            cycles: None,
            patient: SimulatedPatientState::default(),
        }
    }
}

impl AgentConfig {
    /// `LIFY_BROKER_URL` replaces the configured broker host and port.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var("LIFY_BROKER_URL") {
            if !url.is_empty() {
                self.broker_url = url;
            }
        }
    }

    pub fn validate(&self) -> Result<BrokerUrl, AgentError> {
        let url: BrokerUrl = self.broker_url.parse().map_err(|e| AgentError::InvalidConfig(format!("{e}")))?;
        if self.device_id.is_empty() || self.patient_id.is_empty() {
            return Err(AgentError::InvalidConfig("device_id and patient_id are required".into()));
        }
        if self.device_id.contains(['/', '+', '#']) {
            return Err(AgentError::InvalidConfig(format!("device_id {:?} is not a valid topic level", self.device_id)));
        }
        if self.period_ms == 0 {
            return Err(AgentError::InvalidConfig("period must be positive".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(AgentError::InvalidConfig("buffer capacity must be positive".into()));
        }
        if url.tls && self.ca_path.is_none() {
            return Err(AgentError::InvalidConfig(format!("{url} needs a CA certificate (ca_path)")));
        }
        self.patient.validate()?;
        Ok(url)
    }
}
