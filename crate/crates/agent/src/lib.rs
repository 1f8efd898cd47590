//! The bedside device process.
//!
//! Each acquisition cycle reads (or simulates) the optical pulse sensor and
//! the infrared thermometer, runs the vital-sign estimators, packages a
//! [`TelemetryEnvelope`] and hands it to the publisher, which delivers it to
//! the broker at QoS 1 from a bounded retry buffer.

mod agent;
mod buffer;
mod config;
mod error;
mod publish;
mod simulator;
mod synth;

pub use agent::{run_agent, Agent, AgentHandle, AgentStats, AgentStopper};
pub use buffer::RetryBuffer;
pub use config::{AgentConfig, DEFAULT_BUFFER_CAPACITY, DEFAULT_PERIOD_MS};
pub use error::AgentError;
pub use lify_core::TelemetryEnvelope;
pub use publish::{publish, telemetry_topic, PublishError, MAX_PAYLOAD_BYTES, TELEMETRY_FILTER};
pub use simulator::{Anomaly, DriftParams, PatientSimulator, SimulatedPatientState};
pub use synth::{flat_ppg, generate_ppg, PPG_SAMPLE_RATE_HZ, PPG_WINDOW_S};
