//! The `lify` command: services, simulated fleets, demo data and scripted
//! scenarios.

pub mod config;
pub mod error;
pub mod scenario;
pub mod seed;
pub mod simulate;
pub mod stack;

pub use config::{LifyConfig, Profile};
pub use error::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
pub use scenario::{run_scenario, ScenarioOptions, ScenarioReport, ScenarioScript};
pub use seed::{seed_demo, SeedOptions, SeedReport};
pub use simulate::{fleet_configs, replay_fleet, run_fleet, AnomalySpec, FleetOptions};
pub use stack::{ReadyInfo, ServeOptions, Services, Stack};
