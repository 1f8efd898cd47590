//! Alert evaluation and lifecycle.
//!
//! Every accepted sample is checked against its patient's rule for that
//! metric. A rule fires after `debounce_n` consecutive out-of-range samples
//! and stays silent until `rearm_m` consecutive in-range samples have been
//! seen. Staff can also raise alerts by hand; either kind is acknowledged
//! exactly once.

mod engine;
mod error;
mod machine;
mod rule;
mod rulebook;
mod store;

pub use engine::{AlertEngine, NOTIFY_QUEUE_CAPACITY};
pub use error::AlertError;
pub use machine::{evaluate, RuleState};
pub use rule::{default_rules, AlertRule, MAX_MANUAL_MESSAGE_CHARS};
pub use rulebook::RuleBook;
pub use store::{AlertFilter, AlertStore, StateFilter};
