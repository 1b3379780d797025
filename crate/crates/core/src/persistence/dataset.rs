//! Learning dataset export.
//!
//! The CSV starts with a `# format_version: 1` comment line followed by a
//! header row and one row per sample:
//!
//! ```text
//! # format_version: 1
//! subject_id,label,shape,t_index,x,y,z
//! h01,healthy,triangle,0,-12.5,40.1,0.02
//! ```
//!
//! `t_index` counts samples within the trimmed series, so it runs `0..L`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_version, PersistenceError, SessionRecord, FORMAT_VERSION};
use crate::simulation::{AssistMode, SubjectKind};

/// Default trim window: the 101st through 1000th samples.
pub const DEFAULT_TRIM: Range<usize> = 100..1000;

/// A fixed-length trajectory with its three coordinate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub subject_id: String,
    pub label: SubjectKind,
    pub shape_name: String,
    /// Rows x, y, z (mm), each of length `len()`.
    pub series: [Vec<f64>; 3],
}

impl TrajectorySeries {
    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> [f64; 3] {
        [self.series[0][i], self.series[1][i], self.series[2][i]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    /// Tick index range kept from each record (0-based, end exclusive).
    pub trim: Range<usize>,
    /// Session modes to export. Unassisted sessions only by default, so each
    /// (subject, shape) contributes one series.
    pub modes: Vec<AssistMode>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            trim: DEFAULT_TRIM,
            modes: vec![AssistMode::NoAssist],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRecord {
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOutcome {
    pub series: Vec<TrajectorySeries>,
    pub skipped: Vec<SkippedRecord>,
}

/// Trims every eligible record to `options.trim`. Records that are too short,
/// unlabelled or in an unselected mode are reported in `skipped`.
pub fn export_dataset<'a, I>(records: I, options: &ExportOptions) -> Result<ExportOutcome, PersistenceError>
where
    I: IntoIterator<Item = &'a SessionRecord>,
{
    if options.trim.is_empty() {
        return Err(PersistenceError::Validation("empty trim window".into()));
    }
    let mut series = Vec::new();
    let mut skipped = Vec::new();
    for r in records {
        let skip = |reason: String| SkippedRecord {
            session_id: r.header.session_id.clone(),
            reason,
        };
        if !options.modes.contains(&r.header.mode) {
            skipped.push(skip(format!("mode {} not exported", r.header.mode)));
            continue;
        }
        let Some(label) = r.header.cohort_label else {
            skipped.push(skip("no cohort label".into()));
            continue;
        };
        if r.ticks.len() < options.trim.end {
            skipped.push(skip(format!(
                "{} ticks, need at least {}",
                r.ticks.len(),
                options.trim.end
            )));
            continue;
        }
        let ticks = &r.ticks[options.trim.clone()];
        series.push(TrajectorySeries {
            subject_id: r.header.patient_id.clone(),
            label,
            shape_name: r.header.shape_name.clone(),
            series: [
                ticks.iter().map(|t| t.pen_position.x).collect(),
                ticks.iter().map(|t| t.pen_position.y).collect(),
                ticks.iter().map(|t| t.pen_position.z).collect(),
            ],
        });
    }
    if series.is_empty() {
        return Err(PersistenceError::EmptyExport);
    }
    Ok(ExportOutcome { series, skipped })
}

/// Picks the same number of subjects from each label (the size of the smaller
/// group) and keeps all of their series. Deterministic in `seed`; the input
/// order is preserved.
pub fn balanced_subset(series: &[TrajectorySeries], seed: u64) -> Vec<TrajectorySeries> {
    let mut by_label: BTreeMap<SubjectKind, BTreeSet<&str>> = BTreeMap::new();
    for s in series {
        by_label.entry(s.label).or_default().insert(&s.subject_id);
    }
    if by_label.len() < 2 {
        return Vec::new();
    }
    let per_label = by_label.values().map(BTreeSet::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: BTreeSet<(SubjectKind, &str)> = BTreeSet::new();
    for (label, subjects) in &by_label {
        let mut subjects: Vec<&str> = subjects.iter().copied().collect();
        subjects.shuffle(&mut rng);
        chosen.extend(subjects.into_iter().take(per_label).map(|s| (*label, s)));
    }
    series
        .iter()
        .filter(|s| chosen.contains(&(s.label, s.subject_id.as_str())))
        .cloned()
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Row {
    subject_id: String,
    label: SubjectKind,
    shape: String,
    t_index: usize,
    x: f64,
    y: f64,
    z: f64,
}

pub fn write_dataset_csv<W: Write>(mut out: W, series: &[TrajectorySeries]) -> Result<(), PersistenceError> {
    writeln!(out, "# format_version: {FORMAT_VERSION}").map_err(|e| PersistenceError::io("dataset", e))?;
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for i in 0..s.len() {
            let [x, y, z] = s.sample(i);
            w.serialize(Row {
                subject_id: s.subject_id.clone(),
                label: s.label,
                shape: s.shape_name.clone(),
                t_index: i,
                x,
                y,
                z,
            })?;
        }
    }
    w.flush().map_err(|e| PersistenceError::io("dataset", e))?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<TrajectorySeries>, PersistenceError> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input
        .read_line(&mut first)
        .map_err(|e| PersistenceError::io("dataset", e))?;
    let version = first
        .trim()
        .strip_prefix("# format_version:")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| PersistenceError::Validation("dataset: missing `# format_version` line".into()))?;
    check_version(version)?;

    let mut series: Vec<TrajectorySeries> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: Row = row?;
        let continues = series.last().is_some_and(|s: &TrajectorySeries| {
            s.subject_id == row.subject_id && s.label == row.label && s.shape_name == row.shape
        });
        if !continues {
            series.push(TrajectorySeries {
                subject_id: row.subject_id.clone(),
                label: row.label,
                shape_name: row.shape.clone(),
                series: Default::default(),
            });
        }
        let s = series.last_mut().expect("series pushed above");
        if row.t_index != s.len() {
            return Err(PersistenceError::Validation(format!(
                "dataset: {} {} sample {} out of sequence (expected {})",
                row.subject_id,
                row.shape,
                row.t_index,
                s.len()
            )));
        }
        s.series[0].push(row.x);
        s.series[1].push(row.y);
        s.series[2].push(row.z);
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use nalgebra::{Point3, Vector3};

    use super::*;
    use crate::forcefield::ForceBreakdown;
    use crate::geometry::{builtin_shape, Shape};
    use crate::persistence::{SessionHeader, Tick};

    fn record(subject: &str, label: SubjectKind, ticks: usize, mode: AssistMode) -> SessionRecord {
        let header = SessionHeader {
            format_version: FORMAT_VERSION,
            session_id: format!("{subject}-triangle-{mode}"),
            patient_id: subject.into(),
            cohort_label: Some(label),
            shape_name: "triangle".into(),
            mode,
            tick_hz: 30,
            loop_capture_radius: 6.0,
            seed: None,
            started_at: None,
        };
        let mut r = SessionRecord::new(header, builtin_shape(Shape::Triangle, 100.0).unwrap());
        for i in 0..ticks {
            r.record_tick(Tick {
                t: i as f64 / 30.0,
                pen_position: Point3::new(i as f64, -(i as f64), 0.5),
                pen_velocity: Vector3::zeros(),
                assist_on: false,
                assist_scale: 1.0,
                d_s: 0.0,
                nearest_segment: 0,
                loops: 0,
                tripped: false,
                force_breakdown: ForceBreakdown::zero(),
            })
            .unwrap();
        }
        r
    }

    #[test]
    fn trims_to_nine_hundred() {
        let r = record("p01", SubjectKind::Patient, 1200, AssistMode::NoAssist);
        let out = export_dataset([&r], &ExportOptions::default()).unwrap();
        assert_eq!(out.series.len(), 1);
        let s = &out.series[0];
        assert_eq!(s.len(), 900);
        assert_eq!(s.sample(0), [100.0, -100.0, 0.5]);
        assert_eq!(s.sample(899), [999.0, -999.0, 0.5]);
    }

    #[test]
    fn short_records_are_skipped() {
        let short = record("p01", SubjectKind::Patient, 900, AssistMode::NoAssist);
        let exact = record("p02", SubjectKind::Patient, 1000, AssistMode::NoAssist);
        let assisted = record("p02", SubjectKind::Patient, 1000, AssistMode::ContinuousAssist);
        let out = export_dataset([&short, &exact, &assisted], &ExportOptions::default()).unwrap();
        assert_eq!(out.series.len(), 1);
        assert_eq!(out.skipped.len(), 2);
        assert_eq!(out.skipped[0].session_id, short.header.session_id);
        assert!(matches!(
            export_dataset([&short], &ExportOptions::default()),
            Err(PersistenceError::EmptyExport)
        ));
    }

    #[test]
    fn balanced_ten_and_ten() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(record(&format!("h{i:02}"), SubjectKind::Healthy, 1000, AssistMode::NoAssist));
        }
        for i in 0..11 {
            records.push(record(&format!("p{i:02}"), SubjectKind::Patient, 1000, AssistMode::NoAssist));
        }
        let all = export_dataset(&records, &ExportOptions::default()).unwrap().series;
        let a = balanced_subset(&all, 42);
        let count = |s: &[TrajectorySeries], k| s.iter().filter(|x| x.label == k).count();
        assert_eq!(count(&a, SubjectKind::Healthy), 10);
        assert_eq!(count(&a, SubjectKind::Patient), 10);
        assert_eq!(a, balanced_subset(&all, 42));
        // Some other seed drops a different patient.
        let dropped = |s: &[TrajectorySeries]| {
            (0..11)
                .map(|i| format!("p{i:02}"))
                .find(|id| !s.iter().any(|x| &x.subject_id == id))
                .unwrap()
        };
        assert!((0..20).any(|seed| dropped(&balanced_subset(&all, seed)) != dropped(&a)));
    }

    #[test]
    fn csv_round_trip() {
        let records = [
            record("h01", SubjectKind::Healthy, 1000, AssistMode::NoAssist),
            record("p01", SubjectKind::Patient, 1000, AssistMode::NoAssist),
        ];
        let series = export_dataset(&records, &ExportOptions::default()).unwrap().series;
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &series).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# format_version: 1"));
        assert_eq!(lines.next(), Some("subject_id,label,shape,t_index,x,y,z"));
        assert_eq!(text.lines().count(), 2 + 1800);
        assert_eq!(read_dataset_csv(&buf[..]).unwrap(), series);
    }

    #[test]
    fn csv_version_checked() {
        let text = "# format_version: 9\nsubject_id,label,shape,t_index,x,y,z\n";
        assert!(matches!(
            read_dataset_csv(text.as_bytes()),
            Err(PersistenceError::UnsupportedVersion { found: 9, .. })
        ));
        assert!(read_dataset_csv("subject_id,label\n".as_bytes()).is_err());
    }
}
