use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use rand::RngCore;
use serde::Serialize;

pub const TOKEN_TTL_MS: i64 = 24 * 60 * 60 * 1000;
pub const LOGIN_WINDOW_MS: i64 = 60_000;
pub const MAX_LOGIN_FAILURES: usize = 5;

/// An issued bearer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionToken {
    pub token: String,
    pub user_id: String,
    pub issued_ts_ms: i64,
    pub expires_ts_ms: i64,
}

/// In-memory session table. Tokens are 256 random bits, hex encoded.
#[derive(Default)]
pub struct Sessions {
    by_token: Mutex<HashMap<String, SessionToken>>,
}

impl Sessions {
    pub fn issue(&self, user_id: &str, now_ms: i64) -> SessionToken {
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let session = SessionToken {
            token: hex::encode(raw),
            user_id: user_id.to_string(),
            issued_ts_ms: now_ms,
            expires_ts_ms: now_ms + TOKEN_TTL_MS,
        };
        let mut map = self.by_token.lock().unwrap();
        map.retain(|_, s| s.expires_ts_ms > now_ms);
        map.insert(session.token.clone(), session.clone());
        session
    }

    /// The user behind a live token.
    pub fn resolve(&self, token: &str, now_ms: i64) -> Option<String> {
        let mut map = self.by_token.lock().unwrap();
        match map.get(token) {
            Some(s) if s.expires_ts_ms > now_ms => Some(s.user_id.clone()),
            Some(_) => {
                map.remove(token);
                None
            }
            None => None,
        }
    }

    pub fn revoke(&self, token: &str) -> bool {
        self.by_token.lock().unwrap().remove(token).is_some()
    }
}

/// Sliding-window count of failed logins per email.
#[derive(Default)]
pub struct LoginLimiter {
    failures: Mutex<HashMap<String, VecDeque<i64>>>,
}

impl LoginLimiter {
    /// Whether another attempt for `email` is refused outright.
    pub fn is_limited(&self, email: &str, now_ms: i64) -> bool {
        let mut map = self.failures.lock().unwrap();
        let Some(q) = map.get_mut(email) else { return false };
        prune(q, now_ms);
        q.len() >= MAX_LOGIN_FAILURES
    }

    pub fn record_failure(&self, email: &str, now_ms: i64) {
        let mut map = self.failures.lock().unwrap();
        let q = map.entry(email.to_string()).or_default();
        prune(q, now_ms);
        q.push_back(now_ms);
    }

    pub fn clear(&self, email: &str) {
        self.failures.lock().unwrap().remove(email);
    }
}

fn prune(q: &mut VecDeque<i64>, now_ms: i64) {
    while q.front().is_some_and(|&t| now_ms - t >= LOGIN_WINDOW_MS) {
        q.pop_front();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_expire_after_a_day() {
        let s = Sessions::default();
        let t = s.issue("u1", 1_000);
        assert_eq!(t.token.len(), 64);
        assert_eq!(t.expires_ts_ms - t.issued_ts_ms, TOKEN_TTL_MS);
        assert_eq!(s.resolve(&t.token, 1_000 + TOKEN_TTL_MS - 1).as_deref(), Some("u1"));
        assert_eq!(s.resolve(&t.token, 1_000 + TOKEN_TTL_MS), None);
    }

    #[test]
    fn revoked_token_is_dead() {
        let s = Sessions::default();
        let t = s.issue("u1", 0);
        assert!(s.revoke(&t.token));
        assert_eq!(s.resolve(&t.token, 1), None);
        assert_ne!(s.issue("u1", 0).token, s.issue("u1", 0).token);
    }

    #[test]
    fn sixth_attempt_in_window_is_limited() {
        let l = LoginLimiter::default();
        for i in 0..5 {
            assert!(!l.is_limited("a@x", i * 1000));
            l.record_failure("a@x", i * 1000);
        }
        assert!(l.is_limited("a@x", 5_000));
        assert!(!l.is_limited("b@x", 5_000));
        // the first failure ages out of the window
        assert!(!l.is_limited("a@x", 60_000));
    }
}
