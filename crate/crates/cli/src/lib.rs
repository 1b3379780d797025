//! The `trailmaker` command line: batch simulation, analysis, statistics,
//! dataset export, log replay, and the live server.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trailmaker::analytics::{cohort_report, Labelled, Metric, MetricSummary, PAdjust, StatReport};
use trailmaker::cohort::{simulate_to_dir, CohortSpec, Manifest};
use trailmaker::persistence::{
    balanced_subset, export_dataset, load_session, replay, write_dataset_csv, ExportOptions, ReplayReport,
    SessionRecord,
};
use trailmaker::simulation::{AssistMode, SubjectKind};

#[derive(Debug, Parser)]
#[command(name = "trailmaker", version, about = "Assisted trail tracing: simulate, analyze, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the live session server.
    Serve {
        /// JSON service configuration; TRAILMAKER_BIND, TRAILMAKER_PORT and
        /// TRAILMAKER_DATA_DIR override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate a cohort into one log per session plus manifest.json.
    Simulate {
        /// JSON cohort spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Master seed, replacing the spec's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also run healthy subjects with assistance.
        #[arg(long)]
        assist_healthy: bool,
    },
    /// Write one metrics row per session log.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kruskal-Wallis and Dunn across the three cohort groups.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long, default_value = "none")]
        adjust: PAdjust,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Also write the per-shape medians as CSV.
        #[arg(long)]
        shape_csv: Option<PathBuf>,
    },
    /// Export trimmed unassisted trajectories as the learning dataset CSV.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the balanced subject draw.
        #[arg(long)]
        seed: u64,
        /// Keep every subject instead of balancing the labels.
        #[arg(long)]
        unbalanced: bool,
    },
    /// Recompute a log's deviations and loop count; exit 1 on any mismatch.
    Replay { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Deviation,
    Speed,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Deviation => Metric::Deviation,
            MetricArg::Speed => Metric::Speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Exit code when some inputs were skipped but the outputs were written.
pub const EXIT_PARTIAL: i32 = 3;
/// Exit code of a replay that found mismatches.
pub const EXIT_INCONSISTENT: i32 = 1;

/// What a finished command reports: a JSON line for stdout, problems with
/// single inputs for stderr, and the exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: Vec<String>,
    pub problems: Vec<FileProblem>,
    pub code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileProblem {
    pub file: String,
    pub error: String,
}

impl Outcome {
    fn with(line: String, problems: Vec<FileProblem>) -> Self {
        let code = if problems.is_empty() { 0 } else { EXIT_PARTIAL };
        Outcome {
            stdout: vec![line],
            problems,
            code,
        }
    }
}

pub fn load_spec(path: Option<&Path>) -> Result<CohortSpec> {
    let Some(path) = path else {
        return Ok(CohortSpec::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn simulate(spec: Option<&Path>, seed: Option<u64>, out: &Path, assist_healthy: bool) -> Result<Manifest> {
    let mut spec = load_spec(spec)?;
    if let Some(seed) = seed {
        spec.master_seed = seed;
    }
    spec.assist_healthy |= assist_healthy;
    Ok(simulate_to_dir(&spec, out)?)
}

/// Session logs in `dir`, sorted by name. Command journals are not logs.
pub fn session_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".jsonl") && !name.ends_with(".commands.jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub type Loaded = Vec<(PathBuf, SessionRecord)>;

/// Loads every log in `dir`; unreadable ones become problems.
pub fn load_dir(dir: &Path) -> Result<(Loaded, Vec<FileProblem>)> {
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for path in session_files(dir)? {
        match load_session(&path) {
            Ok(r) => records.push((path, r)),
            Err(e) => problems.push(FileProblem {
                file: path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        bail!("no readable session logs in {}", dir.display());
    }
    Ok((records, problems))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub session_id: String,
    pub subject_id: String,
    pub cohort_label: Option<SubjectKind>,
    pub shape: String,
    pub mode: AssistMode,
    pub average_deviation_mm: f64,
    pub speed_mm_s: f64,
    pub loops: u32,
    pub duration_s: f64,
    pub perimeter_mm: f64,
    pub tripped: bool,
}

/// Summaries of the loadable, closed logs in `dir`, with their labels.
pub fn summaries(dir: &Path) -> Result<(Vec<MetricsRow>, Vec<FileProblem>)> {
    let (records, mut problems) = load_dir(dir)?;
    let mut rows = Vec::new();
    for (path, r) in records {
        if !r.is_closed() {
            problems.push(FileProblem {
                file: path.display().to_string(),
                error: "log has no footer (session still open or truncated)".into(),
            });
            continue;
        }
        match MetricSummary::from_record(&r) {
            Ok(s) => rows.push(MetricsRow {
                session_id: r.header.session_id.clone(),
                subject_id: s.subject_id,
                cohort_label: r.header.cohort_label,
                shape: s.shape,
                mode: s.mode,
                average_deviation_mm: s.average_deviation_mm,
                speed_mm_s: s.speed_mm_s,
                loops: s.loops,
                duration_s: s.duration_s,
                perimeter_mm: s.perimeter_mm,
                tripped: r.safety().tripped,
            }),
            Err(e) => problems.push(FileProblem {
                file: path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok((rows, problems))
}

pub fn analyze(input: &Path, out: &Path) -> Result<Outcome> {
    let (rows, problems) = summaries(input)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let line = serde_json::json!({ "rows": rows.len(), "skipped": problems.len(), "out": out });
    Ok(Outcome::with(line.to_string(), problems))
}

impl MetricsRow {
    fn summary(&self) -> MetricSummary {
        MetricSummary {
            subject_id: self.subject_id.clone(),
            shape: self.shape.clone(),
            mode: self.mode,
            average_deviation_mm: self.average_deviation_mm,
            speed_mm_s: self.speed_mm_s,
            loops: self.loops,
            duration_s: self.duration_s,
            perimeter_mm: self.perimeter_mm,
        }
    }
}

pub fn stats_report(input: &Path, metric: Metric, adjust: PAdjust) -> Result<(StatReport, Vec<FileProblem>)> {
    let (rows, mut problems) = summaries(input)?;
    let mut labelled = Vec::new();
    for row in &rows {
        match row.cohort_label {
            Some(label) => labelled.push((label, row.summary())),
            None => problems.push(FileProblem {
                file: row.session_id.clone(),
                error: "no cohort label; not part of any group".into(),
            }),
        }
    }
    let report = cohort_report(labelled.iter().map(|(l, s)| -> Labelled { (*l, s) }), metric, adjust)?;
    Ok((report, problems))
}

pub fn stats(
    input: &Path,
    metric: Metric,
    adjust: PAdjust,
    format: Format,
    shape_csv: Option<&Path>,
) -> Result<Outcome> {
    let (report, problems) = stats_report(input, metric, adjust)?;
    if let Some(path) = shape_csv {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_shape_csv(BufWriter::new(file))?;
    }
    let text = match format {
        Format::Text => report.render_text(),
        Format::Json => report.to_json(),
    };
    Ok(Outcome::with(text, problems))
}

pub fn export(input: &Path, out: &Path, seed: u64, unbalanced: bool) -> Result<Outcome> {
    let (records, mut problems) = load_dir(input)?;
    let outcome = export_dataset(records.iter().map(|(_, r)| r), &ExportOptions::default())?;
    let series = if unbalanced {
        outcome.series
    } else {
        balanced_subset(&outcome.series, seed)
    };
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_dataset_csv(&mut w, &series)?;
    w.flush()?;
    let by_label = |k| series.iter().filter(|s| s.label == k).count();
    let line = serde_json::json!({
        "series": series.len(),
        "healthy": by_label(SubjectKind::Healthy),
        "patient": by_label(SubjectKind::Patient),
        "not_exported": outcome.skipped.len(),
        "out": out,
    });
    // Records left out by mode are expected; anything else is a problem.
    problems.extend(
        outcome
            .skipped
            .iter()
            .filter(|s| !s.reason.starts_with("mode "))
            .map(|s| FileProblem {
                file: s.session_id.clone(),
                error: s.reason.clone(),
            }),
    );
    Ok(Outcome::with(line.to_string(), problems))
}

pub fn replay_file(file: &Path) -> Result<(ReplayReport, Outcome)> {
    let record = load_session(file)?;
    let report = replay(&record)?;
    let verdict = serde_json::json!({
        "file": file,
        "consistent": report.is_consistent(),
        "session_id": report.session_id,
        "ticks": report.ticks,
        "deviation_mismatches": report.deviation_mismatches.len(),
        "first_mismatch": report.deviation_mismatches.first(),
        "loops_stored": report.loops_stored,
        "loops_recomputed": report.loops_recomputed,
    });
    let code = if report.is_consistent() { 0 } else { EXIT_INCONSISTENT };
    Ok((
        report,
        Outcome {
            stdout: vec![verdict.to_string()],
            problems: Vec::new(),
            code,
        },
    ))
}

pub fn serve(config: Option<&Path>) -> Result<()> {
    let config = trailmaker_service::ServiceConfig::load(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let server = trailmaker_service::Server::bind(config).await?;
        server.run(shutdown_signal()).await?;
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Cmd::Serve { config } => {
            serve(config.as_deref())?;
            Ok(Outcome::default())
        }
        Cmd::Simulate {
            spec,
            seed,
            out,
            assist_healthy,
        } => {
            let m = simulate(spec.as_deref(), seed, &out, assist_healthy)?;
            let tripped = m.sessions.iter().filter(|s| s.tripped).count();
            let line = serde_json::json!({
                "sessions": m.sessions.len(),
                "tripped": tripped,
                "master_seed": m.master_seed,
                "manifest": out.join(trailmaker::cohort::MANIFEST_FILE),
            });
            Ok(Outcome::with(line.to_string(), Vec::new()))
        }
        Cmd::Analyze { input, out } => analyze(&input, &out),
        Cmd::Stats {
            input,
            metric,
            adjust,
            format,
            shape_csv,
        } => stats(&input, metric.into(), adjust, format, shape_csv.as_deref()),
        Cmd::Export {
            input,
            out,
            seed,
            unbalanced,
        } => export(&input, &out, seed, unbalanced),
        Cmd::Replay { file } => Ok(replay_file(&file)?.1),
    }
}

/// The machine-readable error printed on stderr.
pub fn error_json(kind: &str, error: &anyhow::Error) -> String {
    let chain: Vec<String> = error.chain().map(ToString::to_string).collect();
    serde_json::json!({ "error": kind, "message": chain.join(": ") }).to_string()
}
