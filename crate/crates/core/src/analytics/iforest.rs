//! Isolation forest over per-timestep position deltas.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::persistence::TrajectorySeries;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary search tree lookup among
/// `n` points, used to normalize isolation depths.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestConfig {
    pub n_trees: usize,
    pub sample_size: usize,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        IForestConfig {
            n_trees: 100,
            sample_size: 256,
            contamination: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        size: usize,
    },
}

impl Node {
    fn build(data: &[Vec<f64>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Node {
        if depth >= limit || idx.len() <= 1 {
            return Node::Leaf { size: idx.len() };
        }
        let dims = data[idx[0]].len();
        let ranges: Vec<(f64, f64)> = (0..dims)
            .map(|f| {
                idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(data[i][f]), hi.max(data[i][f]))
                })
            })
            .collect();
        let splittable: Vec<usize> = (0..dims).filter(|&f| ranges[f].1 > ranges[f].0).collect();
        if splittable.is_empty() {
            return Node::Leaf { size: idx.len() };
        }
        let feature = splittable[rng.random_range(0..splittable.len())];
        let (lo, hi) = ranges[feature];
        let value = lo + rng.random::<f64>() * (hi - lo);
        // Partition in place: values below the split go left.
        let mut mid = 0;
        for k in 0..idx.len() {
            if data[idx[k]][feature] < value {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        Node::Split {
            feature,
            value,
            left: Box::new(Node::build(data, l, depth + 1, limit, rng)),
            right: Box::new(Node::build(data, r, depth + 1, limit, rng)),
        }
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<Node>,
    sample_size: usize,
}

impl IsolationForest {
    pub fn fit(data: &[Vec<f64>], config: &IForestConfig) -> Result<Self, AnalyticsError> {
        if data.is_empty() {
            return Err(AnalyticsError::SampleSize {
                n: 0,
                min: 1,
                max: usize::MAX,
            });
        }
        if config.n_trees == 0 || config.sample_size < 2 {
            return Err(AnalyticsError::InvalidParameter(
                "iforest needs at least one tree and a subsample of at least 2".into(),
            ));
        }
        let dims = data[0].len();
        if data.iter().any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite())) {
            return Err(AnalyticsError::NonFinite);
        }
        let psi = config.sample_size.min(data.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trees = (0..config.n_trees)
            .map(|_| {
                let mut idx = index::sample(&mut rng, data.len(), psi).into_vec();
                Node::build(data, &mut idx, 0, limit, &mut rng)
            })
            .collect();
        Ok(IsolationForest { trees, sample_size: psi })
    }

    /// Anomaly score `2^(-E[h(x)] / c(psi))` in (0, 1]; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean / average_path_length(self.sample_size))
    }

    pub fn score_all(&self, data: &[Vec<f64>]) -> Vec<f64> {
        data.iter().map(|x| self.score(x)).collect()
    }
}

/// Differences between consecutive samples, one row per timestep 1..L.
pub fn delta_features(series: &TrajectorySeries) -> Vec<Vec<f64>> {
    (1..series.len())
        .map(|i| {
            let (a, b) = (series.sample(i - 1), series.sample(i));
            vec![b[0] - a[0], b[1] - a[1], b[2] - a[2]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    /// One score per delta, i.e. per timestep 1..L of the series.
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
    pub contamination: f64,
    pub outlier_fraction: f64,
    /// Lowest flagged score.
    pub threshold: f64,
}

impl OutlierReport {
    /// Flags the `floor(contamination * n)` highest scores; equal scores are
    /// taken in timestep order.
    pub fn from_scores(scores: Vec<f64>, contamination: f64) -> Self {
        let n = scores.len();
        let k = ((contamination * n as f64).floor() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in &order[..k] {
            mask[i] = true;
        }
        let threshold = if k == 0 { f64::INFINITY } else { scores[order[k - 1]] };
        OutlierReport {
            outlier_fraction: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            scores,
            mask,
            contamination,
            threshold,
        }
    }

    pub fn outlier_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Number of scores at or above a threshold fixed elsewhere.
    pub fn count_at_or_above(&self, threshold: f64) -> usize {
        self.scores.iter().filter(|&&s| s >= threshold).count()
    }

    /// Rank of timestep `i` by score, 0 being the most anomalous.
    pub fn rank_of(&self, i: usize) -> usize {
        let s = self.scores[i];
        self.scores
            .iter()
            .enumerate()
            .filter(|&(j, &o)| o > s || (o == s && j < i))
            .count()
    }
}

/// Fits a forest on the series' deltas and flags its most isolated timesteps.
pub fn iforest_outliers(series: &TrajectorySeries, config: &IForestConfig) -> Result<(IsolationForest, OutlierReport), AnalyticsError> {
    if series.len() < 2 {
        return Err(AnalyticsError::SampleSize {
            n: series.len(),
            min: 2,
            max: usize::MAX,
        });
    }
    if !(0.0..=0.5).contains(&config.contamination) {
        return Err(AnalyticsError::InvalidParameter(format!(
            "contamination {} outside [0, 0.5]",
            config.contamination
        )));
    }
    let features = delta_features(series);
    let forest = IsolationForest::fit(&features, config)?;
    let report = OutlierReport::from_scores(forest.score_all(&features), config.contamination);
    Ok((forest, report))
}

/// Scores another series with an already fitted forest.
pub fn score_series(forest: &IsolationForest, series: &TrajectorySeries, contamination: f64) -> OutlierReport {
    OutlierReport::from_scores(forest.score_all(&delta_features(series)), contamination)
}
