use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIST_FLOOR: f64 = 1e-12;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
        .max(DIST_FLOOR)
}

/// The `k` nearest rows of `points` to `x`, skipping index `skip`; ties are
/// broken by index.
fn knn(points: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, p)| (i, dist(x, p)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Local outlier factor over a stored training set. Training points are
/// scored leave-one-out; every distance is floored at 1e-12 so duplicates
/// keep densities finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    /// Distance of each training point to its k-th neighbor.
    pub k_distance: Vec<f64>,
    /// Local reachability density of each training point.
    pub lrd: Vec<f64>,
}

impl LofModel {
    pub fn fit(points: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if k < 1 || k >= points.len() {
            return Err(Error::param(format!(
                "lof needs 1 <= k < training size {}, got k = {k}",
                points.len()
            )));
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..points.len())
            .into_par_iter()
            .map(|i| knn(&points, &points[i], k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|n| n[k - 1].1).collect();
        let lrd = neighbors
            .iter()
            .map(|n| {
                let reach: f64 = n.iter().map(|&(o, d)| d.max(k_distance[o])).sum();
                k as f64 / reach
            })
            .collect();
        Ok(Self {
            k,
            points,
            k_distance,
            lrd,
        })
    }

    fn score_with(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let n = knn(&self.points, x, self.k, skip);
        let reach: f64 = n.iter().map(|&(o, d)| d.max(self.k_distance[o])).sum();
        let own = self.k as f64 / reach;
        let neighbor_mean = n.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64;
        neighbor_mean / own
    }

    /// LOF of a new point against the whole training set.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.score_with(x, None)
    }

    /// LOF of training point `i` with itself excluded from its neighbors.
    pub fn training_score(&self, i: usize) -> f64 {
        self.score_with(&self.points[i], Some(i))
    }
}
