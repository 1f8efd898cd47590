use std::collections::BTreeMap;

use lify_core::{MetricKind, Quality};
use serde::Serialize;
use thiserror::Error;

use crate::storage::{SeriesKey, StoredRecord, TelemetryStore};

pub const MAX_POINTS_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("from ({from_ms}) is after to ({to_ms})")]
    InvertedRange { from_ms: i64, to_ms: i64 },
    #[error("max_points must be between 1 and {MAX_POINTS_LIMIT}, got {0}")]
    MaxPoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatestValue {
    pub value: f64,
    pub quality: Quality,
    pub ts_ms: i64,
}

/// Records of `key` in `[from_ms, to_ms)`, ascending, reduced to at most
/// `max_points` bucket means. An unknown series yields an empty result.
pub fn query_range(
    store: &dyn TelemetryStore,
    key: &SeriesKey,
    from_ms: i64,
    to_ms: i64,
    max_points: usize,
) -> Result<Vec<StoredRecord>, QueryError> {
    if from_ms > to_ms {
        return Err(QueryError::InvertedRange { from_ms, to_ms });
    }
    if !(1..=MAX_POINTS_LIMIT).contains(&max_points) {
        return Err(QueryError::MaxPoints(max_points));
    }
    Ok(downsample(store.range(key, from_ms, to_ms), max_points))
}

/// Splits `records` into `buckets` contiguous runs of near-equal length and
/// replaces each run by its mean.
///
/// Bucket `b` holds indices `[b·n/k, (b+1)·n/k)`. Its timestamp is the
/// truncated mean timestamp, its quality the worst member quality and its
/// device the first member's. Input at or under `buckets` is returned as is.
pub fn downsample(records: Vec<StoredRecord>, buckets: usize) -> Vec<StoredRecord> {
    let n = records.len();
    if buckets == 0 || n <= buckets {
        return records;
    }
    (0..buckets)
        .map(|b| {
            let chunk = &records[b * n / buckets..(b + 1) * n / buckets];
            let len = chunk.len() as f64;
            let value = chunk.iter().map(|r| r.value).sum::<f64>() / len;
            let ts_sum: i128 = chunk.iter().map(|r| r.ts_ms as i128).sum();
            let quality = chunk.iter().map(|r| r.quality).max().expect("bucket is non-empty");
            StoredRecord {
                patient_id: chunk[0].patient_id.clone(),
                metric: chunk[0].metric,
                ts_ms: (ts_sum / chunk.len() as i128) as i64,
                value,
                quality,
                device_id: chunk[0].device_id.clone(),
            }
        })
        .collect()
}

/// Most recent value per metric for a patient; absent metrics are omitted.
pub fn latest(store: &dyn TelemetryStore, patient_id: &str) -> BTreeMap<MetricKind, LatestValue> {
    store
        .latest(patient_id)
        .into_iter()
        .map(|(m, r)| (m, LatestValue { value: r.value, quality: r.quality, ts_ms: r.ts_ms }))
        .collect()
}
