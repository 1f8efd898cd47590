use std::collections::VecDeque;

/// Bounded FIFO of envelopes awaiting acknowledgement. When full, the oldest
/// entry is dropped and counted.
#[derive(Debug)]
pub struct RetryBuffer<T> {
    items: VecDeque<(u64, T)>,
    capacity: usize,
    next_seq: u64,
    dropped: u64,
}

impl<T: Clone> RetryBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "retry buffer capacity must be positive");
        Self { items: VecDeque::with_capacity(capacity.min(4096)), capacity, next_seq: 0, dropped: 0 }
    }

    /// Appends an item, returning the one evicted to make room, if any.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.dropped += 1;
            self.items.pop_front().map(|(_, v)| v)
        } else {
            None
        };
        self.items.push_back((self.next_seq, item));
        self.next_seq += 1;
        evicted
    }

    /// Oldest pending item and its sequence number.
    pub fn front(&self) -> Option<(u64, T)> {
        self.items.front().cloned()
    }

    /// Removes the item with `seq` if it is still the oldest. It may already
    /// have been evicted while it was in flight.
    pub fn ack(&mut self, seq: u64) -> bool {
        if self.items.front().is_some_and(|(s, _)| *s == seq) {
            self.items.pop_front();
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}
