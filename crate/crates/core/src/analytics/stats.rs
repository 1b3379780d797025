//! Nonparametric test battery: Shapiro-Wilk normality, Kruskal-Wallis and
//! Dunn's pairwise post hoc test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::AnalyticsError;

/// Significance level used throughout the reports.
pub const ALPHA: f64 = 0.05;

/// Average ranks (1-based) and the sizes of every tie group.
pub fn rank_with_ties(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j share the mean of ranks i+1..=j.
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normality {
    pub w: f64,
    pub p: f64,
}

pub const SHAPIRO_MIN_N: usize = 3;
pub const SHAPIRO_MAX_N: usize = 5000;

/// Shapiro-Wilk W with Royston's approximations for the coefficients and the
/// p-value (algorithm AS R94).
pub fn shapiro_wilk(samples: &[f64]) -> Result<Normality, AnalyticsError> {
    let n = samples.len();
    if !(SHAPIRO_MIN_N..=SHAPIRO_MAX_N).contains(&n) {
        return Err(AnalyticsError::SampleSize {
            n,
            min: SHAPIRO_MIN_N,
            max: SHAPIRO_MAX_N,
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if !(range > 0.0) {
        return Err(AnalyticsError::Degenerate("constant sample".into()));
    }

    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = 0.5_f64.sqrt();
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let normal = std_normal();
        let m: Vec<f64> = (1..=half)
            .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0].powi(2) - 2.0 * m[1].powi(2)) / (1.0 - 2.0 * a1.powi(2) - 2.0 * a2.powi(2))).sqrt();
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0].powi(2)) / (1.0 - 2.0 * a1.powi(2))).sqrt())
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // W is the squared correlation between the sorted sample and the full
    // antisymmetric coefficient vector.
    let mut coef = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        coef[i] = -ai;
        coef[n - 1 - i] = ai;
    }
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let mx = xs.iter().sum::<f64>() / an;
    let ma = coef.iter().sum::<f64>() / an;
    let (mut saa, mut sxx, mut sax) = (0.0, 0.0, 0.0);
    for (ai, xi) in coef.iter().zip(&xs) {
        let (da, dx) = (ai - ma, xi - mx);
        saa += da * da;
        sxx += dx * dx;
        sax += da * dx;
    }
    let root = (saa * sxx).sqrt();
    let w1 = (root - sax) * (root + sax) / (saa * sxx);
    let w = 1.0 - w1;

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75_f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else {
        let y = w1.ln();
        let (y, m, s) = if n <= 11 {
            let gamma = -2.273 + 0.459 * an;
            if y >= gamma {
                return Ok(Normality { w, p: 1e-99 });
            }
            let m = poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an);
            let s = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp();
            (-(gamma - y).ln(), m, s)
        } else {
            let lx = an.ln();
            let m = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], lx);
            let s = poly(&[-0.4803, -0.082676, 0.0030302], lx).exp();
            (y, m, s)
        };
        std_normal().sf((y - m) / s)
    };
    Ok(Normality { w, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

fn check_groups(groups: &[&[f64]]) -> Result<(), AnalyticsError> {
    if groups.len() < 2 {
        return Err(AnalyticsError::TooFewGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(AnalyticsError::EmptyGroup(i));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    Ok(())
}

struct Pooled {
    mean_ranks: Vec<f64>,
    sizes: Vec<usize>,
    n: usize,
    tie_sum: f64,
}

fn pool(groups: &[&[f64]]) -> Pooled {
    let all: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let (ranks, ties) = rank_with_ties(&all);
    let mut mean_ranks = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        let r = &ranks[offset..offset + g.len()];
        mean_ranks.push(r.iter().sum::<f64>() / g.len() as f64);
        offset += g.len();
    }
    Pooled {
        mean_ranks,
        sizes: groups.iter().map(|g| g.len()).collect(),
        n: all.len(),
        tie_sum: tie_sum(&ties),
    }
}

/// Rank-based H statistic with tie correction; p from chi-square with k - 1
/// degrees of freedom. A pool of identical values gives H = 0, p = 1.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis, AnalyticsError> {
    check_groups(groups)?;
    let pooled = pool(groups);
    let n = pooled.n as f64;
    let df = groups.len() - 1;
    let correction = 1.0 - pooled.tie_sum / (n.powi(3) - n);
    if !(correction > 0.0) {
        return Ok(KruskalWallis { h: 0.0, p: 1.0, df });
    }
    let ssbn: f64 = pooled
        .mean_ranks
        .iter()
        .zip(&pooled.sizes)
        .map(|(r, &s)| s as f64 * r * r)
        .sum();
    let h = (12.0 / (n * (n + 1.0)) * ssbn - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    Ok(KruskalWallis {
        h,
        p: chi.sf(h).clamp(0.0, 1.0),
        df,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PAdjust {
    #[default]
    None,
    Bonferroni,
    Holm,
}

impl std::str::FromStr for PAdjust {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(PAdjust::None),
            "bonferroni" => Ok(PAdjust::Bonferroni),
            "holm" => Ok(PAdjust::Holm),
            _ => Err(format!("unknown p-value adjustment `{s}`")),
        }
    }
}

/// Symmetric pairwise matrices of Dunn z statistics and p-values; the
/// diagonal has z = 0 and p = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    pub z: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub adjust: PAdjust,
}

impl DunnResult {
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i][j]
    }
}

/// Dunn's test on mean ranks of the pooled sample, with tie correction and
/// two-sided normal p-values.
pub fn dunn(groups: &[&[f64]], adjust: PAdjust) -> Result<DunnResult, AnalyticsError> {
    check_groups(groups)?;
    let pooled = pool(groups);
    let k = groups.len();
    let n = pooled.n as f64;
    let variance = n * (n + 1.0) / 12.0 - pooled.tie_sum / (12.0 * (n - 1.0));
    let normal = std_normal();
    let mut z = vec![vec![0.0; k]; k];
    let mut p = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let diff = pooled.mean_ranks[i] - pooled.mean_ranks[j];
            let se = (variance * (1.0 / pooled.sizes[i] as f64 + 1.0 / pooled.sizes[j] as f64)).sqrt();
            let (zij, pij) = if diff == 0.0 || !(se > 0.0) {
                (0.0, 1.0)
            } else {
                let zij = diff / se;
                (zij, (2.0 * normal.sf(zij.abs())).min(1.0))
            };
            z[i][j] = zij;
            z[j][i] = -zij;
            p[i][j] = pij;
            p[j][i] = pij;
        }
    }
    adjust_pairs(&mut p, adjust);
    Ok(DunnResult { z, p, adjust })
}

fn adjust_pairs(p: &mut [Vec<f64>], adjust: PAdjust) {
    let k = p.len();
    let mut pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let m = pairs.len() as f64;
    match adjust {
        PAdjust::None => return,
        PAdjust::Bonferroni => {
            for &(i, j) in &pairs {
                p[i][j] = (p[i][j] * m).min(1.0);
            }
        }
        PAdjust::Holm => {
            pairs.sort_by(|a, b| p[a.0][a.1].total_cmp(&p[b.0][b.1]));
            let mut running: f64 = 0.0;
            for (rank, &(i, j)) in pairs.iter().enumerate() {
                running = running.max(((m - rank as f64) * p[i][j]).min(1.0));
                p[i][j] = running;
            }
        }
    }
    for &(i, j) in &pairs {
        p[j][i] = p[i][j];
    }
}
