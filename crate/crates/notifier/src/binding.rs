use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BIND_CODE_TTL_MS: i64 = 15 * 60 * 1000;
const CODE_LEN: usize = 8;
const CODE_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";

/// Link between an account and the chat its notifications go to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatBinding {
    pub user_id: String,
    pub chat_id: String,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BindCode {
    pub code: String,
    pub expires_ts_ms: i64,
}

#[derive(Debug, Error)]
pub enum BindError {
    #[error("verification code does not match")]
    BadCode,
    #[error("verification code expired")]
    Expired,
    #[error("chat id must not be empty")]
    EmptyChatId,
    #[error("binding storage {path}: {source}")]
    Storage { path: PathBuf, source: std::io::Error },
}

struct Issued {
    code: String,
    expires_ts_ms: i64,
}

/// Chat bindings per user plus the pending verification codes.
pub struct BindingRegistry {
    path: Option<PathBuf>,
    bindings: Mutex<BTreeMap<String, ChatBinding>>,
    codes: Mutex<HashMap<String, Issued>>,
}

impl BindingRegistry {
    pub fn in_memory() -> Self {
        Self { path: None, bindings: Mutex::new(BTreeMap::new()), codes: Mutex::new(HashMap::new()) }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, BindError> {
        let path = path.into();
        let mut bindings = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|source| BindError::Storage { path: path.clone(), source })?;
            let list: Vec<ChatBinding> = serde_json::from_str(&text).map_err(|e| BindError::Storage {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            bindings = list.into_iter().map(|b| (b.user_id.clone(), b)).collect();
        }
        Ok(Self { path: Some(path), bindings: Mutex::new(bindings), codes: Mutex::new(HashMap::new()) })
    }

    /// Issues a fresh code for `user_id`, replacing any outstanding one.
    pub fn issue_code(&self, user_id: &str, now_ms: i64) -> BindCode {
        let mut rng = rand::thread_rng();
        let code: String =
            (0..CODE_LEN).map(|_| CODE_ALPHABET[rng.gen_range(0..CODE_ALPHABET.len())] as char).collect();
        let expires_ts_ms = now_ms + BIND_CODE_TTL_MS;
        self.codes.lock().unwrap().insert(user_id.to_string(), Issued { code: code.clone(), expires_ts_ms });
        BindCode { code, expires_ts_ms }
    }

    /// Verifies `code` and binds `chat_id` to the user, replacing any prior
    /// binding. A used code cannot be reused.
    pub fn bind(&self, user_id: &str, chat_id: &str, code: &str, now_ms: i64) -> Result<ChatBinding, BindError> {
        let chat_id = chat_id.trim();
        if chat_id.is_empty() {
            return Err(BindError::EmptyChatId);
        }
        {
            let mut codes = self.codes.lock().unwrap();
            let issued = codes.get(user_id).ok_or(BindError::BadCode)?;
            if !constant_time_eq(issued.code.as_bytes(), code.trim().to_ascii_uppercase().as_bytes()) {
                return Err(BindError::BadCode);
            }
            if now_ms > issued.expires_ts_ms {
                codes.remove(user_id);
                return Err(BindError::Expired);
            }
            codes.remove(user_id);
        }
        let binding = ChatBinding { user_id: user_id.to_string(), chat_id: chat_id.to_string(), verified: true };
        self.store(binding.clone())?;
        Ok(binding)
    }

    /// Records a chat id that has not been verified yet. It receives nothing
    /// until [`bind`](Self::bind) succeeds.
    pub fn add_unverified(&self, user_id: &str, chat_id: &str) -> Result<ChatBinding, BindError> {
        let binding = ChatBinding { user_id: user_id.to_string(), chat_id: chat_id.to_string(), verified: false };
        self.store(binding.clone())?;
        Ok(binding)
    }

    pub fn binding_for(&self, user_id: &str) -> Option<ChatBinding> {
        self.bindings.lock().unwrap().get(user_id).cloned()
    }

    pub fn remove(&self, user_id: &str) -> Result<(), BindError> {
        let mut map = self.bindings.lock().unwrap();
        let mut next = map.clone();
        next.remove(user_id);
        self.persist(&next)?;
        *map = next;
        Ok(())
    }

    fn store(&self, binding: ChatBinding) -> Result<(), BindError> {
        let mut map = self.bindings.lock().unwrap();
        let mut next = map.clone();
        next.insert(binding.user_id.clone(), binding);
        self.persist(&next)?;
        *map = next;
        Ok(())
    }

    fn persist(&self, map: &BTreeMap<String, ChatBinding>) -> Result<(), BindError> {
        let Some(path) = &self.path else { return Ok(()) };
        let list: Vec<&ChatBinding> = map.values().collect();
        let tmp = path.with_extension("json.tmp");
        let io = |source| BindError::Storage { path: path.clone(), source };
        std::fs::write(&tmp, serde_json::to_vec_pretty(&list).expect("binding serialization is infallible"))
            .map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
