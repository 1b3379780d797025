//! Synthetic cohorts: subject presets with per-subject variation, and batch
//! simulation of every (subject, shape, mode) session.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcefield::AssistConfig;
use crate::geometry::{builtin_shape, GeometryError, Shape};
use crate::persistence::{PersistenceError, SessionRecord};
use crate::simulation::{run_session, AssistMode, SessionConfig, SessionMeta, SimulationError, SubjectKind, SubjectModel};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("session {session_id}: {source}")]
    Session {
        session_id: String,
        #[source]
        source: SimulationError,
    },
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Closed interval a subject parameter is drawn from, uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            self.min + rng.random::<f64>() * (self.max - self.min)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min >= 0.0 && self.max >= self.min
    }
}

/// A population of subject models. Each subject draws every parameter from
/// its range; the bias is lateral, to a random side of the trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPreset {
    pub kind: SubjectKind,
    pub pursuit_gain: Range,
    pub lookahead: Range,
    pub tremor_amplitude: Range,
    pub tremor_frequency: Range,
    pub bias_magnitude: Range,
    pub noise_sigma: Range,
    pub jerk_rate: Range,
}

/// Default tremor frequency (Hz), mid physiological band.
pub const TREMOR_FREQUENCY: f64 = 4.5;

pub const PRESET_NAMES: [&str; 2] = ["healthy", "patient"];

impl SubjectPreset {
    /// Calibrated presets. See `examples/calibrate.rs` for the sweep that
    /// produced these ranges.
    pub fn named(name: &str) -> Option<SubjectPreset> {
        match name {
            "healthy" => Some(SubjectPreset {
                kind: SubjectKind::Healthy,
                pursuit_gain: Range::new(0.09, 0.11),
                lookahead: Range::new(10.0, 11.0),
                tremor_amplitude: Range::new(0.15, 0.25),
                tremor_frequency: Range::fixed(TREMOR_FREQUENCY),
                bias_magnitude: Range::fixed(0.0),
                noise_sigma: Range::fixed(0.15),
                jerk_rate: Range::fixed(0.0),
            }),
            "patient" => Some(SubjectPreset {
                kind: SubjectKind::Patient,
                pursuit_gain: Range::new(1.0, 1.5),
                lookahead: Range::new(0.4, 0.55),
                tremor_amplitude: Range::new(0.05, 0.15),
                tremor_frequency: Range::fixed(TREMOR_FREQUENCY),
                bias_magnitude: Range::new(2.7, 4.5),
                noise_sigma: Range::new(0.06, 0.1),
                jerk_rate: Range::new(0.3, 0.8),
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let ranges = [
            ("pursuit_gain", self.pursuit_gain),
            ("lookahead", self.lookahead),
            ("tremor_amplitude", self.tremor_amplitude),
            ("tremor_frequency", self.tremor_frequency),
            ("bias_magnitude", self.bias_magnitude),
            ("noise_sigma", self.noise_sigma),
            ("jerk_rate", self.jerk_rate),
        ];
        for (name, r) in ranges {
            if !r.valid() {
                return Err(CohortError::InvalidSpec(format!("preset range {name} is invalid: {r:?}")));
            }
        }
        Ok(())
    }

    /// Draws one subject. Deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> SubjectModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pursuit_gain = self.pursuit_gain.sample(&mut rng);
        let lookahead = self.lookahead.sample(&mut rng);
        let tremor_amplitude = self.tremor_amplitude.sample(&mut rng);
        let tremor_frequency = self.tremor_frequency.sample(&mut rng);
        let bias = self.bias_magnitude.sample(&mut rng);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let noise_sigma = self.noise_sigma.sample(&mut rng);
        let jerk_rate = self.jerk_rate.sample(&mut rng);
        SubjectModel {
            kind: self.kind,
            pursuit_gain,
            lookahead,
            tremor_amplitude,
            tremor_frequency,
            bias_offset: Vector2::new(side * bias, 0.0),
            noise_sigma,
            jerk_rate,
            seed,
        }
    }
}

/// Preset given by name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetRef {
    Named(String),
    Custom(SubjectPreset),
}

impl PresetRef {
    pub fn resolve(&self) -> Result<SubjectPreset, CohortError> {
        let preset = match self {
            PresetRef::Named(name) => {
                SubjectPreset::named(name).ok_or_else(|| CohortError::UnknownPreset(name.clone()))?
            }
            PresetRef::Custom(p) => p.clone(),
        };
        preset.validate()?;
        Ok(preset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub healthy_count: usize,
    pub patient_count: usize,
    pub healthy_preset: PresetRef,
    pub patient_preset: PresetRef,
    pub shapes: Vec<Shape>,
    /// Runs healthy subjects in both modes. Off by default: healthy subjects
    /// trace without assistance only.
    pub assist_healthy: bool,
    pub master_seed: u64,
    pub session: SessionConfig,
    pub assist: AssistConfig,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            healthy_count: 10,
            patient_count: 11,
            healthy_preset: PresetRef::Named("healthy".into()),
            patient_preset: PresetRef::Named("patient".into()),
            shapes: Shape::ALL.to_vec(),
            assist_healthy: false,
            master_seed: 0,
            session: SessionConfig::default(),
            assist: AssistConfig::default(),
        }
    }
}

/// One session to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub subject_id: String,
    pub label: SubjectKind,
    pub shape: Shape,
    pub mode: AssistMode,
    /// Seed of the subject's parameter draw.
    pub subject_seed: u64,
    /// Seed of the session's noise, shared by both modes of a subject/shape.
    pub seed: u64,
    pub model: SubjectModel,
}

/// SplitMix64 finalizer, used to derive independent seeds from the master.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ p))
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(SubjectPreset, SubjectPreset), CohortError> {
        if self.healthy_count < 1 || self.patient_count < 1 {
            return Err(CohortError::InvalidSpec("cohort counts must be at least 1".into()));
        }
        if self.shapes.is_empty() {
            return Err(CohortError::InvalidSpec("shapes must not be empty".into()));
        }
        self.session
            .validate()
            .map_err(|e| CohortError::InvalidSpec(e.to_string()))?;
        self.assist
            .validate()
            .map_err(|e| CohortError::InvalidSpec(e.to_string()))?;
        let healthy = self.healthy_preset.resolve()?;
        let patient = self.patient_preset.resolve()?;
        Ok((healthy, patient))
    }

    /// Every session of the cohort in a fixed order.
    pub fn plan(&self) -> Result<Vec<SessionPlan>, CohortError> {
        let (healthy, patient) = self.validate()?;
        let mut plans = Vec::new();
        let cohorts = [
            (SubjectKind::Healthy, &healthy, self.healthy_count, "h"),
            (SubjectKind::Patient, &patient, self.patient_count, "p"),
        ];
        for (label, preset, count, prefix) in cohorts {
            let modes: &[AssistMode] = if label == SubjectKind::Healthy && !self.assist_healthy {
                &[AssistMode::NoAssist]
            } else {
                &AssistMode::ALL
            };
            let cohort_tag = label as u64;
            for index in 0..count {
                let subject_id = format!("{prefix}{:02}", index + 1);
                let subject_seed = derive_seed(self.master_seed, &[cohort_tag, index as u64]);
                let model = SubjectPreset {
                    kind: label,
                    ..preset.clone()
                }
                .sample(subject_seed);
                for (shape_index, &shape) in self.shapes.iter().enumerate() {
                    let seed = derive_seed(subject_seed, &[shape_index as u64 + 1]);
                    for &mode in modes {
                        plans.push(SessionPlan {
                            session_id: format!("{subject_id}_{}_{mode}", shape.name()),
                            subject_id: subject_id.clone(),
                            label,
                            shape,
                            mode,
                            subject_seed,
                            seed,
                            model,
                        });
                    }
                }
            }
        }
        Ok(plans)
    }
}

pub fn run_plan(plan: &SessionPlan, spec: &CohortSpec) -> Result<SessionRecord, CohortError> {
    let trail = builtin_shape(plan.shape, plan.shape.default_size())?;
    let config = SessionConfig {
        mode: plan.mode,
        ..spec.session
    };
    let meta = SessionMeta {
        session_id: plan.session_id.clone(),
        patient_id: plan.subject_id.clone(),
        cohort_label: Some(plan.label),
    };
    run_session(&plan.model, &trail, &config, &spec.assist, plan.seed, meta).map_err(|source| CohortError::Session {
        session_id: plan.session_id.clone(),
        source,
    })
}

/// Runs every planned session in parallel; results keep the plan order.
pub fn simulate_cohort(spec: &CohortSpec) -> Result<Vec<(SessionPlan, SessionRecord)>, CohortError> {
    let plans = spec.plan()?;
    plans
        .into_par_iter()
        .map(|p| run_plan(&p, spec).map(|r| (p, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub session_id: String,
    pub subject_id: String,
    pub label: SubjectKind,
    pub shape: Shape,
    pub mode: AssistMode,
    pub subject_seed: u64,
    pub seed: u64,
    pub ticks: usize,
    pub loops_completed: u32,
    pub tripped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub spec: CohortSpec,
    pub sessions: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Simulates the cohort into `out_dir`: one JSON Lines log per session, then
/// `manifest.json` once every log is on disk. Nothing is written if the spec
/// does not validate.
pub fn simulate_to_dir(spec: &CohortSpec, out_dir: &Path) -> Result<Manifest, CohortError> {
    let plans = spec.plan()?;
    fs::create_dir_all(out_dir).map_err(|source| CohortError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let sessions = plans
        .par_iter()
        .map(|plan| {
            let record = run_plan(plan, spec)?;
            let file = format!("{}.jsonl", plan.session_id);
            record.save(out_dir.join(&file))?;
            Ok(ManifestEntry {
                file,
                session_id: plan.session_id.clone(),
                subject_id: plan.subject_id.clone(),
                label: plan.label,
                shape: plan.shape,
                mode: plan.mode,
                subject_seed: plan.subject_seed,
                seed: plan.seed,
                ticks: record.ticks.len(),
                loops_completed: record.loops_completed(),
                tripped: record.safety().tripped,
            })
        })
        .collect::<Result<Vec<_>, CohortError>>()?;
    let manifest = Manifest {
        format_version: crate::persistence::FORMAT_VERSION,
        master_seed: spec.master_seed,
        spec: spec.clone(),
        sessions,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| CohortError::Io { path, source })?;
    Ok(manifest)
}
