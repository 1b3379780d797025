//! Calibration sweep for the subject presets.
//!
//! Simulates a cohort for each candidate preset and prints the cohort metric
//! means next to the targets they are tuned toward:
//!
//! | group                | deviation (mm) | speed (mm/s) |
//! |----------------------|----------------|--------------|
//! | healthy              | 3.5            | 46.7         |
//! | patient, unassisted  | 4.3            | 26.5         |
//! | patient, assisted    | 3.4            | near healthy |
//!
//! Usage:
//!
//! ```text
//! cargo run --release -p trailmaker --example calibrate                 # current presets
//! cargo run --release -p trailmaker --example calibrate -- sweep-healthy
//! cargo run --release -p trailmaker --example calibrate -- sweep-patient
//! cargo run --release -p trailmaker --example calibrate -- seeds        # verdicts per master seed
//! cargo run --release -p trailmaker --example calibrate -- spec.json    # any CohortSpec
//! ```

use std::time::Instant;

use trailmaker::analytics::{cohort_report, Group, Metric, MetricSummary, PAdjust};
use trailmaker::cohort::{simulate_cohort, CohortSpec, PresetRef, Range, SubjectPreset};
use trailmaker::geometry::Shape;
use trailmaker::simulation::{AssistMode, SubjectKind};

struct Outcome {
    summaries: Vec<(SubjectKind, MetricSummary)>,
}

impl Outcome {
    fn mean(&self, label: SubjectKind, mode: AssistMode, metric: Metric) -> f64 {
        let v: Vec<f64> = self
            .summaries
            .iter()
            .filter(|(k, s)| *k == label && s.mode == mode)
            .map(|(_, s)| metric.of(s))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn run(spec: &CohortSpec) -> Outcome {
    let sessions = simulate_cohort(spec).expect("cohort simulates");
    let summaries = sessions
        .iter()
        .map(|(plan, record)| (plan.label, MetricSummary::from_record(record).expect("metrics")))
        .collect();
    Outcome { summaries }
}

fn print_full(spec: &CohortSpec) {
    let start = Instant::now();
    let out = run(spec);
    println!("simulated {} sessions in {:.1?}", out.summaries.len(), start.elapsed());
    let tripped: Vec<_> = out.summaries.iter().filter(|(_, s)| s.loops < spec.session.target_loops).collect();
    println!("sessions short of target loops: {}", tripped.len());
    for (k, s) in &tripped {
        println!(
            "  {k} {} {} {}: loops {} in {:.0} s, D {:.2}",
            s.subject_id, s.shape, s.mode, s.loops, s.duration_s, s.average_deviation_mm
        );
    }
    for metric in [Metric::Deviation, Metric::Speed] {
        let report = cohort_report(out.summaries.iter().map(|(k, s)| (*k, s)), metric, PAdjust::None).expect("report");
        println!("\n{}", report.render_text());
        if metric == Metric::Deviation {
            for shape in report.shapes() {
                let a = report.shape_row(shape, Group::PatientAssisted).map(|r| r.median);
                let u = report.shape_row(shape, Group::PatientUnassisted).map(|r| r.median);
                println!("{shape:<10} assisted median {a:?} < unassisted median {u:?}");
            }
        }
    }
}

fn print_row(tag: &str, out: &Outcome) {
    use AssistMode::*;
    use SubjectKind::*;
    let short = out.summaries.iter().filter(|(_, s)| s.loops < 10).count();
    println!(
        "{tag:<40} short {short:>2} H: D {:.2} v {:.1} | P: D {:.2} v {:.1} | PA: D {:.2} v {:.1}",
        out.mean(Healthy, NoAssist, Metric::Deviation),
        out.mean(Healthy, NoAssist, Metric::Speed),
        out.mean(Patient, NoAssist, Metric::Deviation),
        out.mean(Patient, NoAssist, Metric::Speed),
        out.mean(Patient, ContinuousAssist, Metric::Deviation),
        out.mean(Patient, ContinuousAssist, Metric::Speed),
    );
}

fn small_spec() -> CohortSpec {
    CohortSpec {
        healthy_count: 4,
        patient_count: 4,
        shapes: Shape::ALL.to_vec(),
        ..CohortSpec::default()
    }
}

fn sweep_healthy() {
    let base = SubjectPreset::named("healthy").unwrap();
    for gain in [0.08, 0.1, 0.13, 0.2] {
        for lookahead in [8.0, 9.0, 10.0, 11.0, 12.0] {
            for tremor in [0.2, 0.6] {
                let preset = SubjectPreset {
                    pursuit_gain: Range::fixed(gain),
                    lookahead: Range::fixed(lookahead),
                    tremor_amplitude: Range::fixed(tremor),
                    ..base.clone()
                };
                let spec = CohortSpec {
                    healthy_preset: PresetRef::Custom(preset),
                    patient_count: 1,
                    ..small_spec()
                };
                print_row(&format!("healthy k={gain} la={lookahead} tr={tremor}"), &run(&spec));
            }
        }
    }
}

fn sweep_patient() {
    let base = SubjectPreset::named("patient").unwrap();
    for gain in [0.5, 1.0, 1.5] {
        for lookahead in [0.3, 0.45, 0.7] {
            for bias in [2.0, 3.0, 4.0] {
                let preset = SubjectPreset {
                    pursuit_gain: Range::fixed(gain),
                    lookahead: Range::fixed(lookahead),
                    bias_magnitude: Range::fixed(bias),
                    ..base.clone()
                };
                let spec = CohortSpec {
                    patient_preset: PresetRef::Custom(preset),
                    healthy_count: 1,
                    ..small_spec()
                };
                print_row(&format!("patient k={gain} la={lookahead} b={bias}"), &run(&spec));
            }
        }
    }
}

/// Checks the four cohort-level verdicts across master seeds.
fn seeds() {
    for seed in 0..8 {
        let spec = CohortSpec {
            master_seed: seed,
            ..CohortSpec::default()
        };
        let out = run(&spec);
        let pairs = || out.summaries.iter().map(|(k, s)| (*k, s));
        let dev = cohort_report(pairs(), Metric::Deviation, PAdjust::None).expect("report");
        let spd = cohort_report(pairs(), Metric::Speed, PAdjust::None).expect("report");
        let sig = |r: &trailmaker::analytics::StatReport, a, b| r.comparison(a, b).is_some_and(|c| c.significant);
        let per_shape = dev.shapes().iter().all(|shape| {
            let a = dev.shape_row(shape, Group::PatientAssisted).map(|r| r.median);
            let u = dev.shape_row(shape, Group::PatientUnassisted).map(|r| r.median);
            matches!((a, u), (Some(a), Some(u)) if a < u)
        });
        println!(
            "seed {seed}: a {} b {} c {} d {}",
            sig(&dev, Group::Healthy, Group::PatientUnassisted),
            sig(&spd, Group::PatientAssisted, Group::PatientUnassisted),
            !sig(&spd, Group::Healthy, Group::PatientAssisted),
            per_shape
        );
    }
}

fn main() {
    let arg = std::env::args().nth(1);
    match arg.as_deref() {
        None => print_full(&CohortSpec::default()),
        Some("sweep-healthy") => sweep_healthy(),
        Some("sweep-patient") => sweep_patient(),
        Some("seeds") => seeds(),
        Some(path) => {
            let text = std::fs::read_to_string(path).expect("readable spec");
            let spec: CohortSpec = serde_json::from_str(&text).expect("valid spec");
            print_full(&spec);
        }
    }
}
