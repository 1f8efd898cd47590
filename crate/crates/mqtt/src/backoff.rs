use std::time::Duration;

use rand::Rng;

/// Exponential reconnect delay with full jitter on the upper half:
/// attempt `n` waits a random time in `[d/2, d]` where `d = min(base·2ⁿ, cap)`.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    cap: Duration,
    attempt: u32,
}

impl Backoff {
    pub fn new(base: Duration, cap: Duration) -> Self {
        Self { base, cap, attempt: 0 }
    }

    /// The ceiling for the next delay, before jitter.
    pub fn ceiling(&self) -> Duration {
        let factor = 1u32.checked_shl(self.attempt.min(20)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn next_delay(&mut self) -> Duration {
        let ceiling = self.ceiling();
        self.attempt = self.attempt.saturating_add(1);
        let lo = ceiling.as_secs_f64() / 2.0;
        Duration::from_secs_f64(rand::thread_rng().gen_range(lo..=ceiling.as_secs_f64().max(lo)))
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}
