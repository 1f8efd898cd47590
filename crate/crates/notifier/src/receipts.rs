use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::warn;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered,
    GaveUp { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub alert_id: String,
    pub chat_id: String,
    pub attempts: u32,
    #[serde(flatten)]
    pub outcome: DeliveryOutcome,
    pub last_attempt_ts_ms: i64,
}

struct Inner {
    receipts: Vec<DeliveryReceipt>,
    delivered: HashMap<(String, String), usize>,
    file: Option<File>,
}

/// Append-only record of delivery outcomes, one JSON object per line.
pub struct ReceiptLog {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ReceiptLog {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::new(Inner { receipts: Vec::new(), delivered: HashMap::new(), file: None }) }
    }

    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let mut receipts = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<DeliveryReceipt>(&line) {
                    Ok(r) => receipts.push(r),
                    Err(e) => warn!(path = %path.display(), line = n + 1, error = %e, "skipping unreadable receipt"),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        // A torn last line from a crash would otherwise glue onto the next record.
        if std::fs::read(&path)?.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        let mut inner = Inner { receipts: Vec::new(), delivered: HashMap::new(), file: Some(file) };
        for r in receipts {
            index(&mut inner, r);
        }
        Ok(Self { path: Some(path), inner: Mutex::new(inner) })
    }

    /// The Delivered receipt for a pair, if one exists.
    pub fn delivered(&self, alert_id: &str, chat_id: &str) -> Option<DeliveryReceipt> {
        let inner = self.inner.lock().unwrap();
        inner.delivered.get(&(alert_id.to_string(), chat_id.to_string())).map(|&i| inner.receipts[i].clone())
    }

    pub fn record(&self, receipt: DeliveryReceipt) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&receipt).expect("receipt serialization is infallible");
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        index(&mut inner, receipt);
        Ok(())
    }

    pub fn all(&self) -> Vec<DeliveryReceipt> {
        self.inner.lock().unwrap().receipts.clone()
    }

    pub fn path(&self) -> Option<&std::path::Path> {
        self.path.as_deref()
    }
}

fn index(inner: &mut Inner, r: DeliveryReceipt) {
    if r.outcome == DeliveryOutcome::Delivered {
        inner.delivered.insert((r.alert_id.clone(), r.chat_id.clone()), inner.receipts.len());
    }
    inner.receipts.push(r);
}
