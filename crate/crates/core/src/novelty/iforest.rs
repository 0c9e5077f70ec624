use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search among `n` points.
pub fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ITree {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: f64,
        left: Box<ITree>,
        right: Box<ITree>,
    },
}

impl ITree {
    fn grow(points: &[&[f64]], depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Self {
        if depth >= limit || points.len() <= 1 {
            return ITree::Leaf { size: points.len() };
        }
        let dim = points[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let lo = points.iter().map(|p| p[f]).fold(f64::INFINITY, f64::min);
                let hi = points
                    .iter()
                    .map(|p| p[f])
                    .fold(f64::NEG_INFINITY, f64::max);
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return ITree::Leaf { size: points.len() };
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (left, right): (Vec<&[f64]>, Vec<&[f64]>) =
            points.iter().partition(|p| p[feature] < value);
        ITree::Split {
            feature,
            value,
            left: Box::new(Self::grow(&left, depth + 1, limit, rng)),
            right: Box::new(Self::grow(&right, depth + 1, limit, rng)),
        }
    }

    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = self;
        let mut depth = 0.0;
        loop {
            match node {
                ITree::Leaf { size } => return depth + c_factor(*size),
                ITree::Split {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<ITree>,
    pub subsample: usize,
}

impl IsolationForest {
    /// Each tree sees `min(subsample, n)` points drawn without replacement
    /// and grows to depth `ceil(log2 subsample)`.
    pub fn fit(points: &[Vec<f64>], n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        if n_trees == 0 {
            return Err(Error::param("isolation forest needs at least one tree"));
        }
        let psi = subsample.min(points.len());
        if psi < 2 {
            return Err(Error::param(format!(
                "isolation forest needs a subsample of at least 2, got {psi}"
            )));
        }
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..n_trees)
            .map(|_| {
                let chosen: Vec<&[f64]> = sample(&mut rng, points.len(), psi)
                    .into_iter()
                    .map(|i| points[i].as_slice())
                    .collect();
                ITree::grow(&chosen, 0, limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample: psi,
        })
    }

    pub fn mean_path(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(-E[h(x)] / c(subsample))`; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        2f64.powf(-self.mean_path(x) / c_factor(self.subsample))
    }
}
