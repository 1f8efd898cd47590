//! The cloud-side ingest edge: subscribes to device telemetry, validates and
//! deduplicates envelopes, persists one record per metric, answers range and
//! latest-value queries, and fans accepted samples out on the event bus.

mod bus;
mod bus_tcp;
mod dedup;
mod ingest;
mod query;
mod run;
pub mod storage;

pub use bus::{BusEvent, BusMessage, EventBus, ReplayGap};
pub use bus_tcp::{forward_bus_tcp, serve_bus_tcp};
pub use dedup::DedupIndex;
pub use ingest::{Gateway, IngestOutcome, IngestStats, RejectReason, FUTURE_TOLERANCE_MS};
pub use query::{downsample, latest, query_range, LatestValue, QueryError, MAX_POINTS_LIMIT};
pub use run::{run_gateway, GatewayConfig, GatewayError};
pub use storage::{FileStore, MemoryStore, SeriesKey, StorageError, StoredRecord, TelemetryStore};
