//! Alert notifications to caregivers' chats.
//!
//! Alerts are formatted as one plain-text message and sent to every verified
//! chat binding of the users who follow the patient. Transient failures are
//! retried with exponential backoff; successful deliveries are recorded so a
//! restart never repeats them.

mod binding;
mod dispatch;
mod format;
mod receipts;
mod service;
mod transport;

pub use binding::{BindCode, BindError, BindingRegistry, ChatBinding, BIND_CODE_TTL_MS};
pub use dispatch::{Dispatcher, RetryPolicy, Sleeper, TokioSleeper};
pub use format::{format_alert_message, short_name, MAX_MESSAGE_CHARS};
pub use receipts::{DeliveryOutcome, DeliveryReceipt, ReceiptLog};
pub use service::{run_notifier, NotifierStats, Recipient, RecipientDirectory};
pub use transport::{BotToken, ChatTransport, HttpTransport, MockTransport, ScriptedReply, SendResult, SentMessage};
