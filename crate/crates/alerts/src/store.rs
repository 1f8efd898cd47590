//! Alert persistence as an append-only log of state changes.
//!
//! `alerts.ndjson` starts with a header line `{"segment":1,"log":"alerts"}`;
//! every following line is either `{"op":"created","alert":{...}}` or
//! `{"op":"acked","alert_id":...,"user_id":...,"ts_ms":...}`. Current state is
//! the fold of the log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lify_core::{Alert, AlertState};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::AlertError;

const LOG_HEADER: &str = r#"{"segment":1,"log":"alerts"}"#;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogEntry {
    Created { alert: Alert },
    Acked { alert_id: String, user_id: String, ts_ms: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFilter {
    Open,
    Acked,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlertFilter {
    pub state: Option<StateFilter>,
    pub patient_id: Option<String>,
    pub since_ms: Option<i64>,
}

impl AlertFilter {
    fn admits(&self, a: &Alert) -> bool {
        let state_ok = match self.state {
            None => true,
            Some(StateFilter::Open) => a.state.is_open(),
            Some(StateFilter::Acked) => !a.state.is_open(),
        };
        state_ok
            && self.patient_id.as_ref().map_or(true, |p| *p == a.patient_id)
            && self.since_ms.map_or(true, |s| a.created_ts_ms >= s)
    }
}

struct Inner {
    alerts: BTreeMap<String, Alert>,
    next_seq: u64,
    log: Option<File>,
}

pub struct AlertStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

fn alert_id(seq: u64) -> String {
    format!("a-{seq:010}")
}

impl AlertStore {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Inner { alerts: BTreeMap::new(), next_seq: 1, log: None }) }
    }

    /// Opens (or creates) the log at `path` and folds it into memory.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AlertError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(AlertError::io(dir))?;
        }
        let mut alerts = BTreeMap::new();
        let mut next_seq = 1;
        let existed = path.exists();
        if existed {
            fold_log(&path, &mut alerts, &mut next_seq)?;
        }
        let mut log = OpenOptions::new().create(true).append(true).open(&path).map_err(AlertError::io(&path))?;
        if !existed || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true) {
            writeln!(log, "{LOG_HEADER}").map_err(AlertError::io(&path))?;
        }
        Ok(Self { path: Some(path), inner: Mutex::new(Inner { alerts, next_seq, log: Some(log) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Stores a new alert under the next sequential id and returns it.
    pub fn insert(&self, mut alert: Alert) -> Result<Alert, AlertError> {
        let mut inner = self.inner.lock().unwrap();
        alert.alert_id = alert_id(inner.next_seq);
        alert.state = AlertState::Open;
        self.append(&mut inner, &LogEntry::Created { alert: alert.clone() })?;
        inner.next_seq += 1;
        inner.alerts.insert(alert.alert_id.clone(), alert.clone());
        Ok(alert)
    }

    /// Moves an open alert to acknowledged. Check and set happen under one
    /// lock.
    pub fn acknowledge(&self, alert_id: &str, user_id: &str, ts_ms: i64) -> Result<Alert, AlertError> {
        let mut inner = self.inner.lock().unwrap();
        let alert = inner.alerts.get(alert_id).ok_or_else(|| AlertError::NotFound(alert_id.to_string()))?;
        if !alert.state.is_open() {
            return Err(AlertError::AlreadyAcked(alert_id.to_string()));
        }
        let entry = LogEntry::Acked { alert_id: alert_id.to_string(), user_id: user_id.to_string(), ts_ms };
        self.append(&mut inner, &entry)?;
        let alert = inner.alerts.get_mut(alert_id).expect("checked above");
        alert.state = AlertState::Acked { user_id: user_id.to_string(), ts_ms };
        Ok(alert.clone())
    }

    pub fn get(&self, alert_id: &str) -> Option<Alert> {
        self.inner.lock().unwrap().alerts.get(alert_id).cloned()
    }

    /// Matching alerts, newest first; ties broken by id, descending.
    pub fn list(&self, filter: &AlertFilter) -> Vec<Alert> {
        let inner = self.inner.lock().unwrap();
        let mut out: Vec<Alert> = inner.alerts.values().filter(|a| filter.admits(a)).cloned().collect();
        out.sort_by(|a, b| (b.created_ts_ms, &b.alert_id).cmp(&(a.created_ts_ms, &a.alert_id)));
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, inner: &mut Inner, entry: &LogEntry) -> Result<(), AlertError> {
        if let (Some(log), Some(path)) = (inner.log.as_mut(), self.path.as_ref()) {
            let mut line = serde_json::to_vec(entry).expect("log entry serialization is infallible");
            line.push(b'\n');
            log.write_all(&line).map_err(AlertError::io(path))?;
        }
        Ok(())
    }
}

fn fold_log(path: &Path, alerts: &mut BTreeMap<String, Alert>, next_seq: &mut u64) -> Result<(), AlertError> {
    let reader = BufReader::new(File::open(path).map_err(AlertError::io(path))?);
    let mut good_end = 0u64;
    let mut offset = 0u64;
    for (n, line) in reader.split(b'\n').enumerate() {
        let line = line.map_err(AlertError::io(path))?;
        offset += line.len() as u64 + 1;
        let text = String::from_utf8_lossy(&line);
        if n == 0 {
            if text.trim() != LOG_HEADER {
                return Err(AlertError::Corrupt { path: path.into(), reason: "missing alert log header".into() });
            }
            good_end = offset;
            continue;
        }
        if text.trim().is_empty() {
            good_end = offset;
            continue;
        }
        match serde_json::from_str::<LogEntry>(&text) {
            Ok(LogEntry::Created { alert }) => {
                if let Some(seq) = alert.alert_id.strip_prefix("a-").and_then(|s| s.parse::<u64>().ok()) {
                    *next_seq = (*next_seq).max(seq + 1);
                }
                alerts.insert(alert.alert_id.clone(), alert);
            }
            Ok(LogEntry::Acked { alert_id, user_id, ts_ms }) => match alerts.get_mut(&alert_id) {
                Some(a) if a.state.is_open() => a.state = AlertState::Acked { user_id, ts_ms },
                _ => warn!(%alert_id, "ignoring acknowledgement of unknown or acked alert"),
            },
            Err(e) => {
                warn!(path = %path.display(), line = n + 1, error = %e, "unreadable alert log line");
                continue;
            }
        }
        good_end = offset;
    }
    let len = std::fs::metadata(path).map_err(AlertError::io(path))?.len();
    if good_end < len {
        // Torn final write: drop it so the next append starts on a fresh line.
        let f = OpenOptions::new().write(true).open(path).map_err(AlertError::io(path))?;
        f.set_len(good_end.min(len)).map_err(AlertError::io(path))?;
    }
    Ok(())
}
