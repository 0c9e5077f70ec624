use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::kmeans::{best_of_runs, sq_dist};
use super::{l2_normalize_rows, Bandwidth, ClusterSet};
use crate::error::{Error, Result};

const ZERO_ROW_AFFINITY: f64 = 1e-12;

fn pairwise_sq(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|p| points.iter().map(|q| sq_dist(p, q)).collect())
        .collect()
}

/// Median of the distances over distinct pairs; 0 for fewer than two points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}

fn resolve_sigma(points: &[Vec<f64>], bandwidth: Bandwidth) -> f64 {
    match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::MedianHeuristic => {
            let m = median_pairwise_distance(points);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    }
}

/// Symmetric normalized Laplacian `I - D^-1/2 A D^-1/2` of the Gaussian RBF
/// affinity `exp(-d^2 / 2 sigma^2)` with a zero diagonal.
pub fn normalized_laplacian(points: &[Vec<f64>], bandwidth: Bandwidth) -> Result<DMatrix<f64>> {
    let sigma = resolve_sigma(points, bandwidth);
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::param(format!(
            "rbf bandwidth must be positive, got {sigma}"
        )));
    }
    let n = points.len();
    let d2 = pairwise_sq(points);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[(i, j)] = (-d2[i][j] / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for i in 0..n {
        if a.row(i).sum() == 0.0 {
            a[(i, i)] = ZERO_ROW_AFFINITY;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).sum().sqrt()).collect();
    let mut l = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
        }
    }
    Ok(l)
}

/// Eigenvalues in ascending order with matching eigenvectors as columns.
fn sorted_eigen(l: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// The `k` smallest Laplacian eigenvalues and the row-normalized embedding
/// built from their eigenvectors (one row per point).
pub fn spectral_embedding(
    points: &[Vec<f64>],
    k: usize,
    bandwidth: Bandwidth,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if k == 0 || k > points.len() {
        return Err(Error::param(format!(
            "spectral needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let (values, vectors) = sorted_eigen(normalized_laplacian(points, bandwidth)?);
    let rows: Vec<Vec<f64>> = (0..points.len())
        .map(|r| (0..k).map(|c| vectors[(r, c)]).collect())
        .collect();
    Ok((values[..k].to_vec(), l2_normalize_rows(&rows)))
}

/// Median over points of the distance to the `rank`-th nearest neighbor.
fn neighbor_scale(points: &[Vec<f64>], rank: usize) -> f64 {
    let d2 = pairwise_sq(points);
    let mut kth: Vec<f64> = d2
        .into_iter()
        .map(|mut row| {
            row.sort_by(f64::total_cmp);
            // row[0] is the point itself
            row[rank.min(row.len() - 1)].sqrt()
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    kth[kth.len() / 2]
}

/// Eigengap estimate of the cluster count: the `k` in `1..=max_k` with the
/// largest gap between the k-th and (k+1)-th smallest Laplacian eigenvalues.
///
/// With the median heuristic the global median distance blurs the gap
/// whenever clusters are far apart, so the estimate uses the median
/// distance to the seventh nearest neighbor as the bandwidth instead.
pub fn estimate_k(points: &[Vec<f64>], bandwidth: Bandwidth, max_k: usize) -> Result<usize> {
    if points.len() < 3 {
        return Ok(1);
    }
    let bandwidth = match bandwidth {
        Bandwidth::Fixed(_) => bandwidth,
        Bandwidth::MedianHeuristic => match neighbor_scale(points, 7) {
            s if s > 0.0 => Bandwidth::Fixed(s),
            _ => Bandwidth::MedianHeuristic,
        },
    };
    let (values, _) = sorted_eigen(normalized_laplacian(points, bandwidth)?);
    let upper = max_k.min(points.len() - 1);
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=upper {
        let gap = values[k] - values[k - 1];
        if gap > best.1 {
            best = (k, gap);
        }
    }
    Ok(best.0)
}

/// Normalized spectral clustering; centroids and dispersions are reported in
/// the original space.
pub fn spectral(
    points: &[Vec<f64>],
    k: usize,
    bandwidth: Bandwidth,
    seed: u64,
) -> Result<ClusterSet> {
    let (_, embedding) = spectral_embedding(points, k, bandwidth)?;
    let run = best_of_runs(&embedding, None, k, seed);
    ClusterSet::from_assignments(points, run.assignments)
}
