//! In-process fan-out of accepted samples and alert events.
//!
//! Every message gets a sequence id. A bounded ring of recent messages lets a
//! late subscriber resume after a given id; when the ring no longer reaches
//! back that far the subscriber is told how many messages it missed.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use lify_core::{Alert, VitalSample};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub const DEFAULT_REPLAY_CAPACITY: usize = 1024;
const CHANNEL_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum BusEvent {
    Sample(VitalSample),
    Alert(Alert),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub id: u64,
    pub event: BusEvent,
}

/// Messages between the requested resume point and the oldest retained one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayGap {
    pub missed: u64,
}

struct Ring {
    next_id: u64,
    recent: VecDeque<BusMessage>,
    capacity: usize,
}

#[derive(Clone)]
pub struct EventBus {
    ring: Arc<Mutex<Ring>>,
    tx: broadcast::Sender<BusMessage>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::with_replay_capacity(DEFAULT_REPLAY_CAPACITY)
    }

    pub fn with_replay_capacity(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        let ring = Ring { next_id: 1, recent: VecDeque::with_capacity(capacity), capacity };
        Self { ring: Arc::new(Mutex::new(ring)), tx }
    }

    /// Publishes an event and returns its id.
    pub fn publish(&self, event: BusEvent) -> u64 {
        let mut ring = self.ring.lock().unwrap();
        let msg = BusMessage { id: ring.next_id, event };
        ring.next_id += 1;
        if ring.capacity > 0 {
            if ring.recent.len() == ring.capacity {
                ring.recent.pop_front();
            }
            ring.recent.push_back(msg.clone());
        }
        let id = msg.id;
        // No receivers is fine: nobody is listening yet.
        let _ = self.tx.send(msg);
        id
    }

    pub fn subscribe(&self) -> broadcast::Receiver<BusMessage> {
        self.tx.subscribe()
    }

    /// Subscribes and returns the retained messages after `last_id`.
    ///
    /// The backlog and the receiver do not overlap or leave a hole between
    /// them.
    pub fn subscribe_from(&self, last_id: u64) -> (Vec<BusMessage>, Option<ReplayGap>, broadcast::Receiver<BusMessage>) {
        let ring = self.ring.lock().unwrap();
        let rx = self.tx.subscribe();
        let backlog: Vec<BusMessage> = ring.recent.iter().filter(|m| m.id > last_id).cloned().collect();
        let first_available = backlog.first().map_or(ring.next_id, |m| m.id);
        let gap = (first_available > last_id + 1 && last_id + 1 < ring.next_id)
            .then(|| ReplayGap { missed: first_available - last_id - 1 });
        (backlog, gap, rx)
    }

    pub fn last_id(&self) -> u64 {
        self.ring.lock().unwrap().next_id - 1
    }
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lify_core::MetricKind;

    fn sample(ts: i64) -> BusEvent {
        BusEvent::Sample(VitalSample::new("p", "d", MetricKind::HrBpm, 70.0, ts))
    }

    #[tokio::test]
    async fn live_subscribers_see_ids_in_order() {
        let bus = EventBus::new();
        let mut rx = bus.subscribe();
        assert_eq!(bus.publish(sample(1)), 1);
        assert_eq!(bus.publish(sample(2)), 2);
        assert_eq!(rx.recv().await.unwrap().id, 1);
        assert_eq!(rx.recv().await.unwrap().id, 2);
    }

    #[tokio::test]
    async fn resume_replays_backlog_then_live() {
        let bus = EventBus::with_replay_capacity(4);
        for ts in 0..3 {
            bus.publish(sample(ts));
        }
        let (backlog, gap, mut rx) = bus.subscribe_from(1);
        assert_eq!(backlog.iter().map(|m| m.id).collect::<Vec<_>>(), [2, 3]);
        assert!(gap.is_none());
        bus.publish(sample(9));
        assert_eq!(rx.recv().await.unwrap().id, 4);
    }

    #[test]
    fn resume_beyond_ring_reports_gap() {
        let bus = EventBus::with_replay_capacity(3);
        for ts in 0..10 {
            bus.publish(sample(ts));
        }
        let (backlog, gap, _rx) = bus.subscribe_from(2);
        assert_eq!(backlog.first().unwrap().id, 8);
        assert_eq!(gap, Some(ReplayGap { missed: 5 }));

        let (backlog, gap, _rx) = bus.subscribe_from(10);
        assert!(backlog.is_empty() && gap.is_none());
    }

    #[test]
    fn wire_form_is_tagged() {
        let text = serde_json::to_string(&sample(5)).unwrap();
        assert!(text.starts_with(r#"{"type":"sample","data":{"#), "{text}");
    }
}
