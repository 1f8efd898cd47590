//! Time-series storage behind one trait, with an in-memory and a file-backed
//! implementation.
//!
//! The file store keeps append-only segments, one newline-delimited JSON file
//! per patient and UTC day at `{root}/{patient_id}/{YYYY-MM-DD}.ndjson`. The
//! first line of a segment is a header
//! `{"segment":1,"patient_id":"p-001","day":"2023-11-14"}`, every following
//! line one [`StoredRecord`]. The in-memory index is rebuilt on open.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use lify_core::{MetricKind, Quality};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub patient_id: String,
    pub metric: MetricKind,
}

impl SeriesKey {
    pub fn new(patient_id: impl Into<String>, metric: MetricKind) -> Self {
        Self { patient_id: patient_id.into(), metric }
    }
}

/// One persisted sample. Unique on `(device_id, ts_ms, metric)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub patient_id: String,
    pub metric: MetricKind,
    pub ts_ms: i64,
    pub value: f64,
    pub quality: Quality,
    pub device_id: String,
}

type UniqueKey = (String, i64, MetricKind);

impl StoredRecord {
    pub fn series(&self) -> SeriesKey {
        SeriesKey::new(self.patient_id.clone(), self.metric)
    }

    fn unique_key(&self) -> UniqueKey {
        (self.device_id.clone(), self.ts_ms, self.metric)
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsafe patient id {0:?}")]
    BadPatientId(String),
}

pub trait TelemetryStore: Send + Sync {
    /// Persists the records whose unique key is not yet stored and returns
    /// them, in input order.
    fn append(&self, records: Vec<StoredRecord>) -> Result<Vec<StoredRecord>, StorageError>;

    fn contains(&self, device_id: &str, ts_ms: i64, metric: MetricKind) -> bool;

    /// Records of one series with `from_ms ≤ ts_ms < to_ms`, ascending.
    fn range(&self, key: &SeriesKey, from_ms: i64, to_ms: i64) -> Vec<StoredRecord>;

    /// Most recent record per metric for a patient.
    fn latest(&self, patient_id: &str) -> BTreeMap<MetricKind, StoredRecord>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Index {
    series: HashMap<SeriesKey, Vec<StoredRecord>>,
    unique: HashSet<UniqueKey>,
}

impl Index {
    fn insert(&mut self, record: StoredRecord) -> bool {
        if !self.unique.insert(record.unique_key()) {
            return false;
        }
        let rows = self.series.entry(record.series()).or_default();
        let pos = rows.partition_point(|r| (r.ts_ms, r.device_id.as_str()) <= (record.ts_ms, record.device_id.as_str()));
        rows.insert(pos, record);
        true
    }

    fn range(&self, key: &SeriesKey, from_ms: i64, to_ms: i64) -> Vec<StoredRecord> {
        let Some(rows) = self.series.get(key) else { return Vec::new() };
        let lo = rows.partition_point(|r| r.ts_ms < from_ms);
        let hi = rows.partition_point(|r| r.ts_ms < to_ms);
        rows[lo..hi.max(lo)].to_vec()
    }

    fn latest(&self, patient_id: &str) -> BTreeMap<MetricKind, StoredRecord> {
        MetricKind::ALL
            .iter()
            .filter_map(|&m| {
                let rows = self.series.get(&SeriesKey::new(patient_id, m))?;
                rows.last().map(|r| (m, r.clone()))
            })
            .collect()
    }
}

/// Volatile store for tests and throwaway runs.
#[derive(Default)]
pub struct MemoryStore {
    index: RwLock<Index>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TelemetryStore for MemoryStore {
    fn append(&self, records: Vec<StoredRecord>) -> Result<Vec<StoredRecord>, StorageError> {
        let mut index = self.index.write().unwrap();
        Ok(records.into_iter().filter(|r| index.insert(r.clone())).collect())
    }

    fn contains(&self, device_id: &str, ts_ms: i64, metric: MetricKind) -> bool {
        self.index.read().unwrap().unique.contains(&(device_id.to_string(), ts_ms, metric))
    }

    fn range(&self, key: &SeriesKey, from_ms: i64, to_ms: i64) -> Vec<StoredRecord> {
        self.index.read().unwrap().range(key, from_ms, to_ms)
    }

    fn latest(&self, patient_id: &str) -> BTreeMap<MetricKind, StoredRecord> {
        self.index.read().unwrap().latest(patient_id)
    }

    fn len(&self) -> usize {
        self.index.read().unwrap().unique.len()
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentHeader {
    segment: u32,
    patient_id: String,
    day: String,
}

const SEGMENT_VERSION: u32 = 1;

struct FileInner {
    index: Index,
    open: HashMap<(String, String), File>,
}

/// Append-only segment files with an in-memory index.
pub struct FileStore {
    root: PathBuf,
    inner: RwLock<FileInner>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

/// UTC calendar day of an epoch-millisecond timestamp.
pub fn utc_day(ts_ms: i64) -> String {
    chrono::DateTime::from_timestamp_millis(ts_ms)
        .map(|d| d.date_naive().format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| "1970-01-01".into())
}

impl FileStore {
    /// Opens (creating if needed) a store rooted at `root` and rebuilds the
    /// index from every segment found there.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut index = Index::default();
        let mut segments = 0usize;
        for entry in fs::read_dir(&root).map_err(io_err(&root))? {
            let entry = entry.map_err(io_err(&root))?;
            let dir = entry.path();
            if !dir.is_dir() {
                continue;
            }
            let patient = entry.file_name().to_string_lossy().to_string();
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
                .collect();
            files.sort();
            for file in files {
                segments += 1;
                load_segment(&file, &patient, &mut index)?;
            }
        }
        info!(root = %root.display(), segments, records = index.unique.len(), "telemetry store opened");
        Ok(Self { root, inner: RwLock::new(FileInner { index, open: HashMap::new() }) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn segment_path(&self, patient_id: &str, day: &str) -> PathBuf {
        self.root.join(patient_id).join(format!("{day}.ndjson"))
    }
}

fn load_segment(path: &Path, patient: &str, index: &mut Index) -> Result<(), StorageError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut offset: u64 = 0;
    let mut good_end: u64 = 0;
    let mut first = true;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        offset += n as u64;
        let complete = line.ends_with('\n');
        let text = line.trim_end();
        if first {
            first = false;
            match serde_json::from_str::<SegmentHeader>(text) {
                Ok(h) if complete && h.segment == SEGMENT_VERSION && h.patient_id == patient => {
                    good_end = offset;
                    continue;
                }
                _ => {
                    warn!(path = %path.display(), "segment header missing or invalid, skipping file");
                    return Ok(());
                }
            }
        }
        match serde_json::from_str::<StoredRecord>(text) {
            Ok(rec) if complete => {
                index.insert(rec);
                good_end = offset;
            }
            Ok(_) | Err(_) if !complete => break,
            _ => warn!(path = %path.display(), offset, "skipping unreadable record"),
        }
    }
    if good_end < offset {
        // A torn final write from a crash: cut it off so appends stay line-aligned.
        warn!(path = %path.display(), lost_bytes = offset - good_end, "truncating incomplete trailing record");
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(good_end).map_err(io_err(path))?;
    }
    Ok(())
}

impl TelemetryStore for FileStore {
    fn append(&self, records: Vec<StoredRecord>) -> Result<Vec<StoredRecord>, StorageError> {
        let mut inner = self.inner.write().unwrap();
        let mut seen = HashSet::new();
        let fresh: Vec<StoredRecord> = records
            .into_iter()
            .filter(|r| !inner.index.unique.contains(&r.unique_key()) && seen.insert(r.unique_key()))
            .collect();
        if let Some(bad) = fresh.iter().find(|r| !lify_core::is_safe_id(&r.patient_id)) {
            return Err(StorageError::BadPatientId(bad.patient_id.clone()));
        }

        let mut grouped: BTreeMap<(String, String), String> = BTreeMap::new();
        for r in &fresh {
            let line = serde_json::to_string(r).expect("record serialization is infallible");
            let chunk = grouped.entry((r.patient_id.clone(), utc_day(r.ts_ms))).or_default();
            chunk.push_str(&line);
            chunk.push('\n');
        }
        for ((patient, day), chunk) in grouped {
            let path = self.segment_path(&patient, &day);
            let key = (patient.clone(), day.clone());
            if !inner.open.contains_key(&key) {
                let dir = self.root.join(&patient);
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let is_new = !path.exists() || fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
                let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
                if is_new {
                    let header = SegmentHeader { segment: SEGMENT_VERSION, patient_id: patient, day };
                    let mut text = serde_json::to_string(&header).expect("header serialization is infallible");
                    text.push('\n');
                    file.write_all(text.as_bytes()).map_err(io_err(&path))?;
                }
                inner.open.insert(key.clone(), file);
            }
            let file = inner.open.get_mut(&key).expect("opened above");
            file.write_all(chunk.as_bytes()).map_err(io_err(&path))?;
        }
        for r in &fresh {
            inner.index.insert(r.clone());
        }
        Ok(fresh)
    }

    fn contains(&self, device_id: &str, ts_ms: i64, metric: MetricKind) -> bool {
        self.inner.read().unwrap().index.unique.contains(&(device_id.to_string(), ts_ms, metric))
    }

    fn range(&self, key: &SeriesKey, from_ms: i64, to_ms: i64) -> Vec<StoredRecord> {
        self.inner.read().unwrap().index.range(key, from_ms, to_ms)
    }

    fn latest(&self, patient_id: &str) -> BTreeMap<MetricKind, StoredRecord> {
        self.inner.read().unwrap().index.latest(patient_id)
    }

    fn len(&self) -> usize {
        self.inner.read().unwrap().index.unique.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(patient: &str, device: &str, metric: MetricKind, ts: i64, value: f64) -> StoredRecord {
        StoredRecord {
            patient_id: patient.into(),
            metric,
            ts_ms: ts,
            value,
            quality: Quality::Ok,
            device_id: device.into(),
        }
    }

    const DAY: i64 = 86_400_000;
    const T0: i64 = 1_700_000_000_000;

    #[test]
    fn day_names_are_utc() {
        assert_eq!(utc_day(T0), "2023-11-14");
        assert_eq!(utc_day(0), "1970-01-01");
    }

    #[test]
    fn memory_store_orders_and_dedups() {
        let s = MemoryStore::new();
        let k = SeriesKey::new("p", MetricKind::TempC);
        let stored = s
            .append(vec![rec("p", "d", MetricKind::TempC, 3, 1.0), rec("p", "d", MetricKind::TempC, 1, 2.0)])
            .unwrap();
        assert_eq!(stored.len(), 2);
        assert!(s.append(vec![rec("p", "d", MetricKind::TempC, 1, 9.0)]).unwrap().is_empty());
        let ts: Vec<i64> = s.range(&k, 0, 10).iter().map(|r| r.ts_ms).collect();
        assert_eq!(ts, [1, 3]);
        assert!(s.range(&k, 1, 3).iter().all(|r| r.ts_ms == 1));
        assert!(s.range(&SeriesKey::new("q", MetricKind::TempC), 0, 10).is_empty());
    }

    #[test]
    fn file_store_writes_segments_and_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<StoredRecord> = (0..50)
            .map(|i| rec("p-1", "dev", MetricKind::HrBpm, T0 + i * DAY / 10, 60.0 + i as f64 * 0.1))
            .collect();
        {
            let s = FileStore::open(dir.path()).unwrap();
            assert_eq!(s.append(records.clone()).unwrap().len(), 50);
        }
        let days: Vec<_> = fs::read_dir(dir.path().join("p-1")).unwrap().collect();
        // 4.9 days starting late on the 14th touch six calendar days.
        assert_eq!(days.len(), 6);
        let first = fs::read_to_string(dir.path().join("p-1").join("2023-11-14.ndjson")).unwrap();
        assert_eq!(first.lines().next().unwrap(), r#"{"segment":1,"patient_id":"p-1","day":"2023-11-14"}"#);

        let s = FileStore::open(dir.path()).unwrap();
        let k = SeriesKey::new("p-1", MetricKind::HrBpm);
        assert_eq!(s.range(&k, 0, i64::MAX), records);
        assert!(s.contains("dev", T0, MetricKind::HrBpm));
        assert!(s.append(records).unwrap().is_empty());
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = FileStore::open(dir.path()).unwrap();
            s.append(vec![rec("p", "d", MetricKind::TempC, T0, 36.5)]).unwrap();
        }
        let path = dir.path().join("p").join("2023-11-14.ndjson");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"patient_id":"p","metric":"te"#).unwrap();
        drop(f);

        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 1);
        s.append(vec![rec("p", "d", MetricKind::TempC, T0 + 1000, 36.6)]).unwrap();
        drop(s);
        let s = FileStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn unsafe_patient_ids_never_touch_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let s = FileStore::open(dir.path()).unwrap();
        let err = s.append(vec![rec("../x", "d", MetricKind::TempC, T0, 36.5)]).unwrap_err();
        assert!(matches!(err, StorageError::BadPatientId(_)));
        assert!(s.is_empty());
    }
}
