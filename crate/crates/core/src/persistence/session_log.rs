//! Session records and their JSON Lines log.
//!
//! A log starts with a header line, followed by trail snapshot and tick lines
//! in session order, and ends with a footer line once the session closes:
//!
//! ```text
//! {"kind":"header","format_version":1,"session_id":"s1",...}
//! {"kind":"trail","from_tick":0,"trail":{...}}
//! {"kind":"tick","t":0.0,"pen_position":[0.0,57.7,0.0],...}
//! ...
//! {"kind":"footer","loops_completed":10,"safety":{...},"ended_at":null}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_version, PersistenceError};
use crate::forcefield::ForceBreakdown;
use crate::geometry::Trail;
use crate::simulation::{count_loops, AssistMode, SafetyState, SubjectKind};

/// Ticks between forced flushes of an open log (one second at 30 Hz).
const FLUSH_EVERY: usize = 30;
/// Allowed deviation of tick timestamps from the nominal grid (s).
const TICK_GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    /// Session time (s).
    pub t: f64,
    pub pen_position: Point3<f64>,
    pub pen_velocity: Vector3<f64>,
    pub assist_on: bool,
    pub assist_scale: f64,
    /// Distance to the nearest candidate point (mm).
    pub d_s: f64,
    pub nearest_segment: usize,
    /// Loops completed as of this tick.
    pub loops: u32,
    pub tripped: bool,
    pub force_breakdown: ForceBreakdown,
}

/// Trail in force from tick `from_tick` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailSnapshot {
    pub from_tick: usize,
    pub trail: Trail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format_version: u32,
    pub session_id: String,
    pub patient_id: String,
    pub cohort_label: Option<SubjectKind>,
    pub shape_name: String,
    pub mode: AssistMode,
    pub tick_hz: u32,
    pub loop_capture_radius: f64,
    pub seed: Option<u64>,
    pub started_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFooter {
    pub loops_completed: u32,
    pub safety: SafetyState,
    pub ended_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Header(SessionHeader),
    Trail(TrailSnapshot),
    Tick(Tick),
    Footer(SessionFooter),
}

/// Everything recorded about one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub trails: Vec<TrailSnapshot>,
    pub ticks: Vec<Tick>,
    /// Present once the session has been closed.
    pub footer: Option<SessionFooter>,
}

impl SessionRecord {
    pub fn new(header: SessionHeader, trail: Trail) -> Self {
        SessionRecord {
            header,
            trails: vec![TrailSnapshot { from_tick: 0, trail }],
            ticks: Vec::new(),
            footer: None,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.footer.is_some()
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn loops_completed(&self) -> u32 {
        self.footer
            .as_ref()
            .map(|f| f.loops_completed)
            .or_else(|| self.ticks.last().map(|t| t.loops))
            .unwrap_or(0)
    }

    pub fn safety(&self) -> SafetyState {
        self.footer.as_ref().map(|f| f.safety).unwrap_or_default()
    }

    /// Trail in force at `tick_index`.
    pub fn trail_at(&self, tick_index: usize) -> &Trail {
        let i = self.trails.partition_point(|s| s.from_tick <= tick_index);
        &self.trails[i.saturating_sub(1)].trail
    }

    /// Trail at the end of the session.
    pub fn final_trail(&self) -> &Trail {
        &self.trails.last().expect("record always holds a trail").trail
    }

    /// Session duration from first to last tick (s).
    pub fn duration(&self) -> f64 {
        match (self.ticks.first(), self.ticks.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn record_tick(&mut self, tick: Tick) -> Result<(), PersistenceError> {
        if self.is_closed() {
            return Err(PersistenceError::SessionClosed);
        }
        if let Some(last) = self.ticks.last() {
            if !(tick.t > last.t) {
                return Err(PersistenceError::OutOfOrderTick {
                    previous: last.t,
                    got: tick.t,
                });
            }
        }
        self.ticks.push(tick);
        Ok(())
    }

    /// Records a trail edit taking effect at the next tick.
    pub fn snapshot_trail(&mut self, trail: Trail) -> Result<(), PersistenceError> {
        if self.is_closed() {
            return Err(PersistenceError::SessionClosed);
        }
        let from_tick = self.ticks.len();
        match self.trails.last_mut() {
            Some(last) if last.from_tick == from_tick => last.trail = trail,
            _ => self.trails.push(TrailSnapshot { from_tick, trail }),
        }
        Ok(())
    }

    pub fn close(&mut self, footer: SessionFooter) -> Result<(), PersistenceError> {
        if self.is_closed() {
            return Err(PersistenceError::SessionClosed);
        }
        self.footer = Some(footer);
        Ok(())
    }

    /// Checks that ticks sit on the `1 / tick_hz` grid.
    pub fn validate_timing(&self) -> Result<(), PersistenceError> {
        let period = 1.0 / f64::from(self.header.tick_hz);
        for w in self.ticks.windows(2) {
            if ((w[1].t - w[0].t) - period).abs() > TICK_GRID_TOLERANCE {
                return Err(PersistenceError::Validation(format!(
                    "tick spacing {} at t={} differs from {period}",
                    w[1].t - w[0].t,
                    w[1].t
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = |l: &LogLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")
        };
        line(&LogLine::Header(self.header.clone()))?;
        let mut snapshots = self.trails.iter().peekable();
        for (i, tick) in self.ticks.iter().enumerate() {
            while let Some(s) = snapshots.next_if(|s| s.from_tick <= i) {
                line(&LogLine::Trail(s.clone()))?;
            }
            line(&LogLine::Tick(tick.clone()))?;
        }
        for s in snapshots {
            line(&LogLine::Trail(s.clone()))?;
        }
        if let Some(f) = &self.footer {
            line(&LogLine::Footer(f.clone()))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistenceError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| PersistenceError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| PersistenceError::io(path, e))
    }

    pub fn read_jsonl<R: BufRead>(input: R, context: &str) -> Result<Self, PersistenceError> {
        let mut record: Option<SessionRecord> = None;
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| PersistenceError::io(context, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| PersistenceError::Parse {
                context: context.to_string(),
                line: n + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            match (parsed, record.as_mut()) {
                (LogLine::Header(h), None) => {
                    check_version(h.format_version)?;
                    record = Some(SessionRecord {
                        header: h,
                        trails: Vec::new(),
                        ticks: Vec::new(),
                        footer: None,
                    });
                }
                (LogLine::Header(_), Some(_)) => {
                    return Err(PersistenceError::Validation(format!("{context}:{}: second header", n + 1)))
                }
                (_, None) => {
                    return Err(PersistenceError::Validation(format!("{context}: log does not start with a header")))
                }
                (LogLine::Trail(s), Some(r)) => {
                    if r.is_closed() {
                        return Err(PersistenceError::SessionClosed);
                    }
                    r.trails.push(s)
                }
                (LogLine::Tick(t), Some(r)) => r.record_tick(t)?,
                (LogLine::Footer(f), Some(r)) => r.close(f)?,
            }
        }
        let record = record.ok_or_else(|| PersistenceError::Validation(format!("{context}: empty log")))?;
        if record.trails.is_empty() {
            return Err(PersistenceError::Validation(format!("{context}: no trail snapshot")));
        }
        Ok(record)
    }
}

pub fn load_session(path: impl AsRef<Path>) -> Result<SessionRecord, PersistenceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PersistenceError::io(path, e))?;
    SessionRecord::read_jsonl(BufReader::new(file), &path.display().to_string())
}

/// Append-only writer for a live session. Flushes at least once per second of
/// session time so a crash loses less than a second of data.
pub struct SessionLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    ticks: usize,
    unflushed: usize,
    last_t: Option<f64>,
    closed: bool,
}

impl SessionLogWriter {
    pub fn create(path: impl AsRef<Path>, header: &SessionHeader, trail: &Trail) -> Result<Self, PersistenceError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| PersistenceError::io(&path, e))?;
        let mut w = SessionLogWriter {
            path,
            out: BufWriter::new(file),
            ticks: 0,
            unflushed: 0,
            last_t: None,
            closed: false,
        };
        w.write(&LogLine::Header(header.clone()))?;
        w.write(&LogLine::Trail(TrailSnapshot {
            from_tick: 0,
            trail: trail.clone(),
        }))?;
        w.flush()?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&mut self, line: &LogLine) -> Result<(), PersistenceError> {
        if self.closed {
            return Err(PersistenceError::SessionClosed);
        }
        serde_json::to_writer(&mut self.out, line)
            .map_err(|e| PersistenceError::io(&self.path, e.into()))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| PersistenceError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), PersistenceError> {
        self.unflushed = 0;
        self.out.flush().map_err(|e| PersistenceError::io(&self.path, e))
    }

    pub fn record_tick(&mut self, tick: &Tick) -> Result<(), PersistenceError> {
        if let Some(prev) = self.last_t {
            if !(tick.t > prev) {
                return Err(PersistenceError::OutOfOrderTick {
                    previous: prev,
                    got: tick.t,
                });
            }
        }
        self.write(&LogLine::Tick(tick.clone()))?;
        self.last_t = Some(tick.t);
        self.ticks += 1;
        self.unflushed += 1;
        if self.unflushed >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(())
    }

    /// Records a trail edit taking effect from the next tick.
    pub fn record_trail(&mut self, trail: &Trail) -> Result<(), PersistenceError> {
        let from_tick = self.ticks;
        self.write(&LogLine::Trail(TrailSnapshot {
            from_tick,
            trail: trail.clone(),
        }))
    }

    pub fn finish(mut self, footer: &SessionFooter) -> Result<PathBuf, PersistenceError> {
        self.write(&LogLine::Footer(footer.clone()))?;
        self.flush()?;
        self.closed = true;
        Ok(self.path.clone())
    }
}

/// Outcome of recomputing a log's derived values from its raw positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub ticks: usize,
    /// Tick indices whose stored `d_s` differs from the recomputed value.
    pub deviation_mismatches: Vec<usize>,
    pub loops_stored: u32,
    pub loops_recomputed: u32,
}

impl ReplayReport {
    pub fn is_consistent(&self) -> bool {
        self.deviation_mismatches.is_empty() && self.loops_stored == self.loops_recomputed
    }
}

/// Recomputes every tick's deviation and the loop count from the recorded
/// positions and trail snapshots. Deviations must match bit for bit.
pub fn replay(record: &SessionRecord) -> Result<ReplayReport, PersistenceError> {
    let mut mismatches = Vec::new();
    for (i, tick) in record.ticks.iter().enumerate() {
        let nearest = record.trail_at(i).nearest_point(tick.pen_position.xy())?;
        if nearest.distance.to_bits() != tick.d_s.to_bits() || nearest.segment_index != tick.nearest_segment {
            mismatches.push(i);
        }
    }
    // Each trail snapshot counts its own loops from the pen position at the
    // edit; the session total is their sum.
    let mut recomputed = 0;
    for (k, snap) in record.trails.iter().enumerate() {
        let end = record.trails.get(k + 1).map_or(record.ticks.len(), |n| n.from_tick);
        let from = snap.from_tick.saturating_sub(1).min(end);
        recomputed += count_loops(
            record.ticks[from..end].iter().map(|t| t.pen_position.xy()),
            snap.trail.targets(),
            record.header.loop_capture_radius,
        );
    }
    Ok(ReplayReport {
        session_id: record.header.session_id.clone(),
        ticks: record.ticks.len(),
        deviation_mismatches: mismatches,
        loops_stored: record.loops_completed(),
        loops_recomputed: recomputed,
    })
}
