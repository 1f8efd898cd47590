use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use tracing::debug;

/// Outcome of one send attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendResult {
    Delivered,
    /// Worth retrying; `retry_after` is the server's requested pause.
    Transient { reason: String, retry_after: Option<Duration> },
    Permanent { reason: String },
}

/// Maps a sendMessage HTTP response to an outcome.
pub(crate) fn classify(status: u16, retry_after: Option<Duration>, body_ok: Option<bool>) -> SendResult {
    match status {
        200 if body_ok == Some(true) => SendResult::Delivered,
        200 => SendResult::Permanent { reason: "not_ok".into() },
        429 => SendResult::Transient { reason: "rate_limited".into(), retry_after },
        500..=599 => SendResult::Transient { reason: format!("http_{status}"), retry_after: None },
        400 => SendResult::Permanent { reason: "bad_request".into() },
        401 => SendResult::Permanent { reason: "unauthorized".into() },
        403 => SendResult::Permanent { reason: "forbidden".into() },
        404 => SendResult::Permanent { reason: "not_found".into() },
        other => SendResult::Permanent { reason: format!("http_{other}") },
    }
}

#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn send(&self, chat_id: &str, text: &str) -> SendResult;
}

/// Bot credential. Never printed.
#[derive(Clone)]
pub struct BotToken(String);

impl BotToken {
    pub fn new(token: impl Into<String>) -> Self {
        Self(token.into())
    }

    /// Reads `LIFY_BOT_TOKEN`.
    pub fn from_env() -> Option<Self> {
        std::env::var("LIFY_BOT_TOKEN").ok().filter(|t| !t.is_empty()).map(Self)
    }
}

impl fmt::Debug for BotToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BotToken(<redacted>)")
    }
}

/// Telegram Bot API `sendMessage` over HTTPS.
pub struct HttpTransport {
    client: reqwest::Client,
    api_base: String,
    token: BotToken,
}

#[derive(Deserialize)]
struct ApiReply {
    ok: Option<bool>,
    parameters: Option<ApiParameters>,
}

#[derive(Deserialize)]
struct ApiParameters {
    retry_after: Option<u64>,
}

impl HttpTransport {
    pub const DEFAULT_API_BASE: &'static str = "https://api.telegram.org";

    pub fn new(api_base: impl Into<String>, token: BotToken, timeout: Duration) -> Result<Self, reqwest::Error> {
        let client = reqwest::Client::builder().timeout(timeout).build()?;
        Ok(Self { client, api_base: api_base.into().trim_end_matches('/').to_string(), token })
    }
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport").field("api_base", &self.api_base).finish_non_exhaustive()
    }
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn send(&self, chat_id: &str, text: &str) -> SendResult {
        let url = format!("{}/bot{}/sendMessage", self.api_base, self.token.0);
        let body = serde_json::json!({ "chat_id": chat_id, "text": text });
        let response = match self.client.post(&url).json(&body).send().await {
            Ok(r) => r,
            Err(e) => {
                // The URL carries the token; strip it before the error is shown anywhere.
                let e = e.without_url();
                let reason = if e.is_timeout() { "timeout" } else { "network" };
                debug!(error = %e, "sendMessage failed");
                return SendResult::Transient { reason: reason.into(), retry_after: None };
            }
        };
        let status = response.status().as_u16();
        let header_retry = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok());
        let reply: Option<ApiReply> = response.json().await.ok();
        let body_retry = reply.as_ref().and_then(|r| r.parameters.as_ref()).and_then(|p| p.retry_after);
        let ok = reply.as_ref().and_then(|r| r.ok);
        classify(status, header_retry.or(body_retry).map(Duration::from_secs), ok)
    }
}

/// What a [`MockTransport`] answers to one send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedReply {
    Status(u16),
    /// 429 with a retry-after of this many seconds.
    RateLimited(u64),
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentMessage {
    pub chat_id: String,
    pub text: String,
    pub result: SendResult,
}

/// Scripted transport: each chat answers from its own queue of replies, then
/// with HTTP 200 once the queue is empty. Every attempt is logged.
#[derive(Default)]
pub struct MockTransport {
    scripts: Mutex<HashMap<String, VecDeque<ScriptedReply>>>,
    log: Mutex<Vec<SentMessage>>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn script(&self, chat_id: &str, replies: impl IntoIterator<Item = ScriptedReply>) {
        self.scripts.lock().unwrap().entry(chat_id.to_string()).or_default().extend(replies);
    }

    pub fn sent(&self) -> Vec<SentMessage> {
        self.log.lock().unwrap().clone()
    }

    pub fn attempts_to(&self, chat_id: &str) -> usize {
        self.log.lock().unwrap().iter().filter(|m| m.chat_id == chat_id).count()
    }
}

#[async_trait]
impl ChatTransport for MockTransport {
    async fn send(&self, chat_id: &str, text: &str) -> SendResult {
        let reply = self
            .scripts
            .lock()
            .unwrap()
            .get_mut(chat_id)
            .and_then(|q| q.pop_front())
            .unwrap_or(ScriptedReply::Status(200));
        let result = match reply {
            ScriptedReply::Status(code) => classify(code, None, Some(code == 200)),
            ScriptedReply::RateLimited(secs) => classify(429, Some(Duration::from_secs(secs)), Some(false)),
            ScriptedReply::Timeout => SendResult::Transient { reason: "timeout".into(), retry_after: None },
        };
        self.log.lock().unwrap().push(SentMessage {
            chat_id: chat_id.to_string(),
            text: text.to_string(),
            result: result.clone(),
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        assert_eq!(classify(200, None, Some(true)), SendResult::Delivered);
        assert!(matches!(classify(200, None, None), SendResult::Permanent { .. }));
        assert!(matches!(classify(502, None, None), SendResult::Transient { .. }));
        assert_eq!(
            classify(429, Some(Duration::from_secs(3)), None),
            SendResult::Transient { reason: "rate_limited".into(), retry_after: Some(Duration::from_secs(3)) }
        );
        assert_eq!(classify(403, None, None), SendResult::Permanent { reason: "forbidden".into() });
        assert_eq!(classify(409, None, None), SendResult::Permanent { reason: "http_409".into() });
    }

    #[test]
    fn token_is_redacted() {
        let t = BotToken::new("123:secret");
        assert!(!format!("{t:?}").contains("secret"));
        let h = HttpTransport::new("http://x/", t, Duration::from_secs(1)).unwrap();
        assert!(!format!("{h:?}").contains("secret"));
    }
}
