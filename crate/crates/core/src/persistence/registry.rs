use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{check_version, PersistenceError, FORMAT_VERSION};
use crate::simulation::SubjectKind;

/// Upper-extremity Fugl-Meyer motor maximum.
pub const FM_MAX: i64 = 66;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmEntry {
    pub date: NaiveDate,
    pub score: u8,
}

/// A patient and their FM score history. The history is append-only:
/// corrections are recorded as new entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct PatientProfile {
    patient_id: String,
    cohort_label: SubjectKind,
    fm_scores: Vec<FmEntry>,
    pub notes: String,
}

#[derive(Deserialize)]
struct RawProfile {
    patient_id: String,
    cohort_label: SubjectKind,
    #[serde(default)]
    fm_scores: Vec<FmEntry>,
    #[serde(default)]
    notes: String,
}

impl TryFrom<RawProfile> for PatientProfile {
    type Error = PersistenceError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        let mut p = PatientProfile::new(raw.patient_id, raw.cohort_label);
        p.notes = raw.notes;
        for e in raw.fm_scores {
            p.update_fm_score(e.date, i64::from(e.score))?;
        }
        Ok(p)
    }
}

impl PatientProfile {
    pub fn new(patient_id: impl Into<String>, cohort_label: SubjectKind) -> Self {
        PatientProfile {
            patient_id: patient_id.into(),
            cohort_label,
            fm_scores: Vec::new(),
            notes: String::new(),
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn cohort_label(&self) -> SubjectKind {
        self.cohort_label
    }

    pub fn fm_scores(&self) -> &[FmEntry] {
        &self.fm_scores
    }

    pub fn latest_fm(&self) -> Option<FmEntry> {
        self.fm_scores.last().copied()
    }

    pub fn update_fm_score(&mut self, date: NaiveDate, score: i64) -> Result<&FmEntry, PersistenceError> {
        if !(0..=FM_MAX).contains(&score) {
            return Err(PersistenceError::ScoreOutOfRange(score));
        }
        if let Some(last) = self.fm_scores.last() {
            if date < last.date {
                return Err(PersistenceError::DateOrder { last: last.date, got: date });
            }
        }
        self.fm_scores.push(FmEntry {
            date,
            score: score as u8,
        });
        Ok(self.fm_scores.last().expect("just pushed"))
    }
}

/// All patient profiles, stored as a single JSON document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRegistry {
    patients: BTreeMap<String, PatientProfile>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    format_version: u32,
    patients: Vec<PatientProfile>,
}

impl PatientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientProfile> {
        self.patients.get(patient_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &PatientProfile> {
        self.patients.values()
    }

    /// Inserts or replaces a profile, returning the previous one.
    pub fn upsert(&mut self, profile: PatientProfile) -> Option<PatientProfile> {
        self.patients.insert(profile.patient_id.clone(), profile)
    }

    pub fn update_fm_score(&mut self, patient_id: &str, date: NaiveDate, score: i64) -> Result<FmEntry, PersistenceError> {
        let p = self
            .patients
            .get_mut(patient_id)
            .ok_or_else(|| PersistenceError::UnknownPatient(patient_id.to_string()))?;
        p.update_fm_score(date, score).copied()
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            format_version: FORMAT_VERSION,
            patients: self.patients.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self, PersistenceError> {
        let version: serde_json::Value =
            serde_json::from_str(text).map_err(|e| PersistenceError::parse(context, &e))?;
        if let Some(v) = version.get("format_version").and_then(|v| v.as_u64()) {
            check_version(v as u32)?;
        }
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| PersistenceError::parse(context, &e))?;
        let mut reg = PatientRegistry::new();
        for p in file.patients {
            if reg.upsert(p.clone()).is_some() {
                return Err(PersistenceError::Validation(format!(
                    "{context}: duplicate patient_id `{}`",
                    p.patient_id
                )));
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistenceError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| PersistenceError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistenceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PersistenceError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}
