use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::RwLock;

use lify_core::MetricKind;

use crate::error::AlertError;
use crate::rule::{default_rules, AlertRule};

type RuleKey = (String, MetricKind);

/// The current rule per (patient, metric), optionally mirrored to a JSON file.
pub struct RuleBook {
    path: Option<PathBuf>,
    rules: RwLock<BTreeMap<RuleKey, AlertRule>>,
}

impl RuleBook {
    pub fn in_memory() -> Self {
        Self { path: None, rules: RwLock::new(BTreeMap::new()) }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AlertError> {
        let path = path.into();
        let mut rules = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(AlertError::io(&path))?;
            let list: Vec<AlertRule> = serde_json::from_str(&text)
                .map_err(|e| AlertError::Corrupt { path: path.clone(), reason: e.to_string() })?;
            for r in list {
                rules.insert((r.patient_id.clone(), r.metric), r);
            }
        }
        Ok(Self { path: Some(path), rules: RwLock::new(rules) })
    }

    /// The enabled rule for a key, if any.
    pub fn active(&self, patient_id: &str, metric: MetricKind) -> Option<AlertRule> {
        self.rules
            .read()
            .unwrap()
            .get(&(patient_id.to_string(), metric))
            .filter(|r| r.enabled)
            .cloned()
    }

    pub fn for_patient(&self, patient_id: &str) -> Vec<AlertRule> {
        self.rules.read().unwrap().values().filter(|r| r.patient_id == patient_id).cloned().collect()
    }

    /// Validates and stores rules for one patient; a rule replaces any
    /// earlier rule for the same metric. All-or-nothing.
    pub fn put(&self, patient_id: &str, rules: Vec<AlertRule>) -> Result<Vec<AlertRule>, AlertError> {
        let mut normalized = Vec::with_capacity(rules.len());
        for mut r in rules {
            if r.patient_id.is_empty() {
                r.patient_id = patient_id.to_string();
            }
            if r.patient_id != patient_id {
                return Err(AlertError::Validation(format!(
                    "rule for patient {} submitted under patient {patient_id}",
                    r.patient_id
                )));
            }
            r.rule_id = format!("{patient_id}:{}", r.metric.code());
            r.validate()?;
            normalized.push(r);
        }
        let mut map = self.rules.write().unwrap();
        let mut next = map.clone();
        for r in &normalized {
            next.insert((patient_id.to_string(), r.metric), r.clone());
        }
        self.persist(&next)?;
        *map = next;
        Ok(map.values().filter(|r| r.patient_id == patient_id).cloned().collect())
    }

    /// Installs the default rules for metrics the patient has no rule for.
    pub fn ensure_defaults(&self, patient_id: &str) -> Result<(), AlertError> {
        let missing: Vec<AlertRule> = {
            let map = self.rules.read().unwrap();
            default_rules(patient_id)
                .into_iter()
                .filter(|r| !map.contains_key(&(patient_id.to_string(), r.metric)))
                .collect()
        };
        if !missing.is_empty() {
            self.put(patient_id, missing)?;
        }
        Ok(())
    }

    fn persist(&self, rules: &BTreeMap<RuleKey, AlertRule>) -> Result<(), AlertError> {
        let Some(path) = &self.path else { return Ok(()) };
        let list: Vec<&AlertRule> = rules.values().collect();
        let text = serde_json::to_string_pretty(&list).expect("rule serialization is infallible");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(AlertError::io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(AlertError::io(path))
    }
}
