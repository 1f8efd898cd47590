use std::collections::HashMap;
use std::num::NonZeroUsize;

use lify_core::MetricKind;
use lru::LruCache;

pub const DEFAULT_DEDUP_CAPACITY: usize = 86_400;

/// Recently seen `(ts_ms, metric)` keys, one bounded LRU per device.
///
/// Keys evicted from here are still caught by the store's uniqueness check.
pub struct DedupIndex {
    capacity: NonZeroUsize,
    devices: HashMap<String, LruCache<(i64, MetricKind), ()>>,
}

impl DedupIndex {
    pub fn new(capacity_per_device: usize) -> Self {
        Self {
            capacity: NonZeroUsize::new(capacity_per_device.max(1)).expect("clamped to at least 1"),
            devices: HashMap::new(),
        }
    }

    pub fn contains(&mut self, device_id: &str, ts_ms: i64, metric: MetricKind) -> bool {
        self.devices.get_mut(device_id).is_some_and(|c| c.get(&(ts_ms, metric)).is_some())
    }

    pub fn insert(&mut self, device_id: &str, ts_ms: i64, metric: MetricKind) {
        let capacity = self.capacity;
        self.devices
            .entry(device_id.to_string())
            .or_insert_with(|| LruCache::new(capacity))
            .put((ts_ms, metric), ());
    }

    pub fn len(&self, device_id: &str) -> usize {
        self.devices.get(device_id).map_or(0, |c| c.len())
    }
}

impl Default for DedupIndex {
    fn default() -> Self {
        Self::new(DEFAULT_DEDUP_CAPACITY)
    }
}
