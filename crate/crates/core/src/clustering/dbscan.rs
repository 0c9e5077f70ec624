use std::collections::VecDeque;

use rayon::prelude::*;

use super::kmeans::sq_dist;
use super::ClusterSet;
use crate::error::{Error, Result};

/// Brute-force DBSCAN. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Border points reachable from several
/// clusters join the first one that reaches them; unreachable points are
/// noise.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<ClusterSet> {
    if eps.is_nan() || eps <= 0.0 || min_pts == 0 {
        return Err(Error::param(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got eps = {eps}, min_pts = {min_pts}"
        )));
    }
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = points
        .par_iter()
        .map(|p| {
            (0..points.len())
                .filter(|&j| sq_dist(p, &points[j]) <= eps2)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut next = 0;
    for start in 0..points.len() {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if labels[j].is_none() {
                    labels[j] = Some(next);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    ClusterSet::from_labels(points, labels)
}
