use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::RwLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::store::JsonFile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Medication {
    pub name: String,
    #[serde(default)]
    pub dose: String,
    #[serde(default)]
    pub schedule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: String,
    pub name: String,
    /// `YYYY-MM-DD`.
    pub birth_date: String,
    #[serde(default)]
    pub pre_existing_conditions: Vec<String>,
    #[serde(default)]
    pub daily_medication: Vec<Medication>,
    #[serde(default)]
    pub device_ids: Vec<String>,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub deleted: bool,
}

/// Client-supplied fields for create and update.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientInput {
    pub patient_id: Option<String>,
    pub name: Option<String>,
    pub birth_date: Option<String>,
    pub pre_existing_conditions: Option<Vec<String>>,
    pub daily_medication: Option<Vec<Medication>>,
    pub device_ids: Option<Vec<String>>,
    pub notes: Option<String>,
}

impl PatientProfile {
    pub fn validate(&self, today: NaiveDate) -> Result<(), ApiError> {
        if !lify_core::is_safe_id(&self.patient_id) {
            return Err(ApiError::validation("patient_id must be 1-64 characters of letters, digits, '.', '_' or '-'"));
        }
        if self.name.trim().is_empty() || self.name.chars().count() > 200 {
            return Err(ApiError::validation("name must be 1-200 characters"));
        }
        let born = NaiveDate::parse_from_str(&self.birth_date, "%Y-%m-%d")
            .map_err(|_| ApiError::validation(format!("birth_date {:?} is not YYYY-MM-DD", self.birth_date)))?;
        if born >= today {
            return Err(ApiError::validation("birth_date must be in the past"));
        }
        if let Some(d) = self.device_ids.iter().find(|d| !lify_core::is_safe_id(d)) {
            return Err(ApiError::validation(format!("device id {d:?} is not valid")));
        }
        if self.daily_medication.iter().any(|m| m.name.trim().is_empty()) {
            return Err(ApiError::validation("every medication needs a name"));
        }
        Ok(())
    }

    pub fn apply(&mut self, input: PatientInput) {
        if let Some(v) = input.name {
            self.name = v;
        }
        if let Some(v) = input.birth_date {
            self.birth_date = v;
        }
        if let Some(v) = input.pre_existing_conditions {
            self.pre_existing_conditions = v;
        }
        if let Some(v) = input.daily_medication {
            self.daily_medication = v;
        }
        if let Some(mut v) = input.device_ids {
            v.sort();
            v.dedup();
            self.device_ids = v;
        }
        if let Some(v) = input.notes {
            self.notes = v;
        }
    }
}

pub struct PatientStore {
    file: JsonFile,
    patients: RwLock<BTreeMap<String, PatientProfile>>,
}

impl PatientStore {
    pub fn open(path: Option<PathBuf>) -> std::io::Result<Self> {
        let file = JsonFile::new(path);
        let list: Vec<PatientProfile> = file.load()?;
        let patients = list.into_iter().map(|p| (p.patient_id.clone(), p)).collect();
        Ok(Self { file, patients: RwLock::new(patients) })
    }

    pub fn get(&self, patient_id: &str) -> Option<PatientProfile> {
        self.patients.read().unwrap().get(patient_id).cloned()
    }

    pub fn list(&self) -> Vec<PatientProfile> {
        self.patients.read().unwrap().values().cloned().collect()
    }

    pub fn create(&self, profile: PatientProfile) -> Result<PatientProfile, ApiError> {
        let mut map = self.patients.write().unwrap();
        if map.contains_key(&profile.patient_id) {
            return Err(ApiError::conflict("patient_exists", format!("patient {} already exists", profile.patient_id)));
        }
        check_devices(&map, &profile)?;
        let mut next = map.clone();
        next.insert(profile.patient_id.clone(), profile.clone());
        self.persist(&next)?;
        *map = next;
        Ok(profile)
    }

    /// Applies `f` to one live patient and re-checks device uniqueness, all
    /// under one lock.
    pub fn update(
        &self,
        patient_id: &str,
        f: impl FnOnce(&mut PatientProfile) -> Result<(), ApiError>,
    ) -> Result<PatientProfile, ApiError> {
        let mut map = self.patients.write().unwrap();
        let mut profile = map
            .get(patient_id)
            .filter(|p| !p.deleted)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format_args!("patient {patient_id}")))?;
        f(&mut profile)?;
        check_devices(&map, &profile)?;
        let mut next = map.clone();
        next.insert(patient_id.to_string(), profile.clone());
        self.persist(&next)?;
        *map = next;
        Ok(profile)
    }

    /// The live patient a device currently serves.
    pub fn patient_for_device(&self, device_id: &str) -> Option<String> {
        self.patients
            .read()
            .unwrap()
            .values()
            .find(|p| !p.deleted && p.device_ids.iter().any(|d| d == device_id))
            .map(|p| p.patient_id.clone())
    }

    fn persist(&self, map: &BTreeMap<String, PatientProfile>) -> Result<(), ApiError> {
        let list: Vec<&PatientProfile> = map.values().collect();
        self.file.save(&list).map_err(|e| ApiError::internal("patient storage", e))
    }
}

fn check_devices(map: &BTreeMap<String, PatientProfile>, profile: &PatientProfile) -> Result<(), ApiError> {
    for other in map.values().filter(|p| !p.deleted && p.patient_id != profile.patient_id) {
        if let Some(d) = profile.device_ids.iter().find(|d| other.device_ids.contains(d)) {
            return Err(ApiError::conflict(
                "device_bound",
                format!("device {d} already serves patient {}", other.patient_id),
            ));
        }
    }
    Ok(())
}
