use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use lify_core::{Alert, Clock};
use tracing::{info, warn};

use crate::binding::ChatBinding;
use crate::receipts::{DeliveryOutcome, DeliveryReceipt, ReceiptLog};
use crate::transport::{ChatTransport, SendResult};

/// Retry schedule: after the first attempt, up to `max_retries` more, waiting
/// `base·2^(k−1)` before retry `k`, never more than `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 5, base: Duration::from_secs(1), cap: Duration::from_secs(16) }
    }
}

impl RetryPolicy {
    /// Delay before retry `k` (1-based). A server-requested pause stretches
    /// it; the result never drops below `prev` and never exceeds the cap.
    pub fn delay(&self, k: u32, prev: Duration, retry_after: Option<Duration>) -> Duration {
        let factor = 1u32.checked_shl(k.saturating_sub(1).min(20)).unwrap_or(u32::MAX);
        let scheduled = self.base.saturating_mul(factor);
        scheduled.max(prev).max(retry_after.unwrap_or_default()).min(self.cap)
    }
}

#[async_trait]
pub trait Sleeper: Send + Sync {
    async fn sleep(&self, d: Duration);
}

pub struct TokioSleeper;

#[async_trait]
impl Sleeper for TokioSleeper {
    async fn sleep(&self, d: Duration) {
        tokio::time::sleep(d).await
    }
}

pub struct Dispatcher {
    transport: Arc<dyn ChatTransport>,
    receipts: Arc<ReceiptLog>,
    sleeper: Arc<dyn Sleeper>,
    clock: Arc<dyn Clock>,
    policy: RetryPolicy,
}

impl Dispatcher {
    pub fn new(
        transport: Arc<dyn ChatTransport>,
        receipts: Arc<ReceiptLog>,
        sleeper: Arc<dyn Sleeper>,
        clock: Arc<dyn Clock>,
        policy: RetryPolicy,
    ) -> Self {
        Self { transport, receipts, sleeper, clock, policy }
    }

    pub fn receipts(&self) -> &Arc<ReceiptLog> {
        &self.receipts
    }

    /// Sends `text` to every verified binding's chat. Chats are served
    /// concurrently; attempts for one chat are sequential. Pairs already
    /// delivered, even by an earlier process, are not attempted again and
    /// their stored receipt is returned.
    pub async fn dispatch(&self, alert: &Alert, text: &str, bindings: &[ChatBinding]) -> Vec<DeliveryReceipt> {
        let mut chats: Vec<&str> = bindings.iter().filter(|b| b.verified).map(|b| b.chat_id.as_str()).collect();
        chats.sort_unstable();
        chats.dedup();
        join_all(chats.into_iter().map(|chat| self.deliver(alert, text, chat))).await
    }

    async fn deliver(&self, alert: &Alert, text: &str, chat_id: &str) -> DeliveryReceipt {
        if let Some(done) = self.receipts.delivered(&alert.alert_id, chat_id) {
            return done;
        }
        let mut attempts = 0u32;
        let mut prev = Duration::ZERO;
        let outcome = loop {
            attempts += 1;
            match self.transport.send(chat_id, text).await {
                SendResult::Delivered => break DeliveryOutcome::Delivered,
                SendResult::Permanent { reason } => break DeliveryOutcome::GaveUp { reason },
                SendResult::Transient { reason, retry_after } => {
                    if attempts > self.policy.max_retries {
                        break DeliveryOutcome::GaveUp { reason: format!("retries_exhausted ({reason})") };
                    }
                    let delay = self.policy.delay(attempts, prev, retry_after);
                    warn!(alert_id = %alert.alert_id, %chat_id, attempts, %reason, delay_ms = delay.as_millis() as u64, "send failed, retrying");
                    self.sleeper.sleep(delay).await;
                    prev = delay;
                }
            }
        };
        let receipt = DeliveryReceipt {
            alert_id: alert.alert_id.clone(),
            chat_id: chat_id.to_string(),
            attempts,
            outcome,
            last_attempt_ts_ms: self.clock.now_ms(),
        };
        info!(alert_id = %receipt.alert_id, %chat_id, attempts, outcome = ?receipt.outcome, "delivery finished");
        if let Err(e) = self.receipts.record(receipt.clone()) {
            warn!(error = %e, "could not persist delivery receipt");
        }
        receipt
    }
}
