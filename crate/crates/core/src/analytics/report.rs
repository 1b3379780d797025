//! Cohort comparison: normality, Kruskal-Wallis and Dunn over the healthy,
//! unassisted-patient and assisted-patient groups, plus per-shape summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::MetricSummary;
use super::stats::{dunn, kruskal_wallis, shapiro_wilk, KruskalWallis, Normality, PAdjust, ALPHA};
use super::AnalyticsError;
use crate::simulation::{AssistMode, SubjectKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Deviation,
    Speed,
}

impl Metric {
    pub fn of(self, s: &MetricSummary) -> f64 {
        match self {
            Metric::Deviation => s.average_deviation_mm,
            Metric::Speed => s.speed_mm_s,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Deviation => "deviation",
            Metric::Speed => "speed",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Metric::Deviation => "mm",
            Metric::Speed => "mm/s",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deviation" => Ok(Metric::Deviation),
            "speed" => Ok(Metric::Speed),
            _ => Err(format!("unknown metric `{s}` (expected deviation or speed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Healthy,
    PatientUnassisted,
    PatientAssisted,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Healthy, Group::PatientUnassisted, Group::PatientAssisted];

    /// Healthy sessions count only when unassisted.
    pub fn of(label: SubjectKind, mode: AssistMode) -> Option<Group> {
        match (label, mode) {
            (SubjectKind::Healthy, AssistMode::NoAssist) => Some(Group::Healthy),
            (SubjectKind::Healthy, AssistMode::ContinuousAssist) => None,
            (SubjectKind::Patient, AssistMode::NoAssist) => Some(Group::PatientUnassisted),
            (SubjectKind::Patient, AssistMode::ContinuousAssist) => Some(Group::PatientAssisted),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Healthy => "healthy",
            Group::PatientUnassisted => "patient_unassisted",
            Group::PatientAssisted => "patient_assisted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: Group,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    /// None when the group is too small or constant.
    pub normality: Option<Normality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Group,
    pub b: Group,
    /// Dunn p-value; None when Kruskal-Wallis did not reject.
    pub p: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub shape: String,
    pub group: Group,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub metric: Metric,
    pub alpha: f64,
    pub adjust: PAdjust,
    pub groups: Vec<GroupStats>,
    pub kruskal_wallis: KruskalWallis,
    /// Healthy vs unassisted, healthy vs assisted, assisted vs unassisted.
    pub comparisons: Vec<Comparison>,
    pub per_shape: Vec<ShapeRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// A session summary with the cohort label it belongs to.
pub type Labelled<'a> = (SubjectKind, &'a MetricSummary);

pub fn cohort_report<'a, I>(summaries: I, metric: Metric, adjust: PAdjust) -> Result<StatReport, AnalyticsError>
where
    I: IntoIterator<Item = Labelled<'a>>,
{
    let mut values: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    let mut by_shape: BTreeMap<(String, Group), Vec<f64>> = BTreeMap::new();
    for (label, s) in summaries {
        let Some(group) = Group::of(label, s.mode) else {
            continue;
        };
        let v = metric.of(s);
        values.entry(group).or_default().push(v);
        by_shape.entry((s.shape.clone(), group)).or_default().push(v);
    }
    let groups: Vec<&[f64]> = Group::ALL
        .iter()
        .map(|g| {
            values
                .get(g)
                .map(Vec::as_slice)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| AnalyticsError::MissingGroup(g.as_str().to_string()))
        })
        .collect::<Result<_, _>>()?;

    let group_stats = Group::ALL
        .iter()
        .zip(&groups)
        .map(|(&group, v)| GroupStats {
            group,
            n: v.len(),
            median: median(v),
            mean: mean(v),
            normality: shapiro_wilk(v).ok(),
        })
        .collect();

    let kw = kruskal_wallis(&groups)?;
    let pairs = [(0, 1), (0, 2), (2, 1)];
    let comparisons = if kw.p < ALPHA {
        let d = dunn(&groups, adjust)?;
        pairs
            .iter()
            .map(|&(i, j)| Comparison {
                a: Group::ALL[i],
                b: Group::ALL[j],
                p: Some(d.p(i, j)),
                significant: d.p(i, j) < ALPHA,
            })
            .collect()
    } else {
        pairs
            .iter()
            .map(|&(i, j)| Comparison {
                a: Group::ALL[i],
                b: Group::ALL[j],
                p: None,
                significant: false,
            })
            .collect()
    };

    let per_shape = by_shape
        .into_iter()
        .map(|((shape, group), v)| ShapeRow {
            shape,
            group,
            n: v.len(),
            median: median(&v),
            mean: mean(&v),
        })
        .collect();

    Ok(StatReport {
        metric,
        alpha: ALPHA,
        adjust,
        groups: group_stats,
        kruskal_wallis: kw,
        comparisons,
        per_shape,
    })
}

impl StatReport {
    pub fn comparison(&self, a: Group, b: Group) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }

    pub fn shape_row(&self, shape: &str, group: Group) -> Option<&ShapeRow> {
        self.per_shape.iter().find(|r| r.shape == shape && r.group == group)
    }

    pub fn shapes(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.per_shape.iter().map(|r| r.shape.as_str()).collect();
        s.dedup();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let unit = self.metric.unit();
        let _ = writeln!(out, "metric: {} ({unit}), alpha = {}", self.metric.as_str(), self.alpha);
        let _ = writeln!(out, "\n{:<20} {:>4} {:>10} {:>10} {:>8} {:>10}", "group", "n", "median", "mean", "SW W", "SW p");
        for g in &self.groups {
            let (w, p) = g
                .normality
                .map_or(("-".to_string(), "-".to_string()), |n| (format!("{:.4}", n.w), format!("{:.4}", n.p)));
            let _ = writeln!(
                out,
                "{:<20} {:>4} {:>10.3} {:>10.3} {:>8} {:>10}",
                g.group.as_str(),
                g.n,
                g.median,
                g.mean,
                w,
                p
            );
        }
        let kw = &self.kruskal_wallis;
        let _ = writeln!(out, "\nKruskal-Wallis: H = {:.4}, df = {}, p = {:.4e}", kw.h, kw.df, kw.p);
        for c in &self.comparisons {
            let p = c.p.map_or("n/a".to_string(), |p| format!("{p:.4e}"));
            let verdict = if c.significant { "significant" } else { "not significant" };
            let _ = writeln!(out, "Dunn {} vs {}: p = {p} ({verdict})", c.a.as_str(), c.b.as_str());
        }
        let _ = writeln!(out, "\n{:<12} {:<20} {:>4} {:>10} {:>10}", "shape", "group", "n", "median", "mean");
        for r in &self.per_shape {
            let _ = writeln!(
                out,
                "{:<12} {:<20} {:>4} {:>10.3} {:>10.3}",
                r.shape,
                r.group.as_str(),
                r.n,
                r.median,
                r.mean
            );
        }
        out
    }

    pub fn write_shape_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.per_shape {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}
