use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterSet;
use crate::error::{Error, Result};

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-6;
const N_INIT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Weighted inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansRun {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let pick = |scores: &[f64], rng: &mut dyn rand::RngCore| -> Option<usize> {
        let total: f64 = scores.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        for (i, &s) in scores.iter().enumerate() {
            if s > 0.0 {
                if target < s {
                    return Some(i);
                }
                target -= s;
            }
        }
        scores.iter().rposition(|&s| s > 0.0)
    };
    let first = pick(weights, rng).unwrap_or(0);
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // every remaining point coincides with a centroid: fall back to the
        // first point not yet used verbatim
        let next = pick(&scores, rng).unwrap_or_else(|| {
            (0..points.len())
                .find(|&i| !centroids.iter().any(|c| c == &points[i]))
                .unwrap_or(0)
        });
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().expect("just pushed")));
        }
    }
    centroids
}

/// One weighted Lloyd run from k-means++ seeds.
///
/// Empty clusters are repaired by moving the point farthest from its
/// centroid into them, which keeps the inertia trace non-increasing.
pub fn lloyd(
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    k: usize,
    rng: &mut impl Rng,
) -> KMeansRun {
    let unit;
    let weights = match weights {
        Some(w) => w,
        None => {
            unit = vec![1.0; points.len()];
            &unit
        }
    };
    let dim = points[0].len();
    let mut centroids = plus_plus_seeds(points, weights, k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut inertia_trace = Vec::new();
    for _ in 0..MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            dists[i] = d;
        }
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&c| counts[c] += 1);
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    (dists[a] * weights[a])
                        .total_cmp(&(dists[b] * weights[b]))
                        .then(b.cmp(&a))
                });
            if let Some(i) = donor {
                counts[assignments[i]] -= 1;
                assignments[i] = empty;
                counts[empty] = 1;
                centroids[empty] = points[i].clone();
                dists[i] = 0.0;
            }
        }
        inertia_trace.push(dists.iter().zip(weights).map(|(d, w)| d * w).sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for ((p, &c), &w) in points.iter().zip(&assignments).zip(weights) {
            mass[c] += w;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += w * v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if mass[c] > 0.0 {
                let updated: Vec<f64> = sums[c].iter().map(|s| s / mass[c]).collect();
                shift = shift.max(sq_dist(&updated, &centroids[c]).sqrt());
                centroids[c] = updated;
            }
        }
        if shift < TOL {
            break;
        }
    }
    KMeansRun {
        assignments,
        centroids,
        inertia_trace,
    }
}

pub(crate) fn best_of_runs(
    points: &[Vec<f64>],
    weights: Option<&[f64]>,
    k: usize,
    seed: u64,
) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansRun> = None;
    for _ in 0..N_INIT {
        let run = lloyd(points, weights, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    best.expect("N_INIT > 0")
}

/// Lloyd's algorithm with k-means++ seeding, best of ten seeded restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterSet> {
    if k == 0 || k > points.len() {
        return Err(Error::param(format!(
            "k-means needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    let run = best_of_runs(points, None, k, seed);
    ClusterSet::from_assignments(points, run.assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::testdata::blobs;

    fn one_d(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|v| vec![*v]).collect()
    }

    fn inertia_of(points: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for group in [0, 1] {
            let members: Vec<f64> = points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == group)
                .map(|(p, _)| p[0])
                .collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            total += members.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        total
    }

    #[test]
    fn two_pairs_match_exhaustive_optimum() {
        let points = one_d(&[0.0, 0.1, 10.0, 10.1]);
        // exhaustive search over every non-trivial 2-partition
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let labels: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
            let inertia = inertia_of(&points, &labels);
            if inertia < best.0 {
                best = (inertia, mask);
            }
        }
        let expected: Vec<usize> = (0..4).map(|i| ((best.1 >> i) & 1) as usize).collect();
        let cs = kmeans(&points, 2, 1).unwrap();
        let got: Vec<usize> = cs.assignments.iter().map(|a| a.unwrap()).collect();
        assert!(got == expected || got.iter().zip(&expected).all(|(g, e)| g != e));
        let mut centroids: Vec<f64> = cs.centroids.iter().map(|c| c[0]).collect();
        centroids.sort_by(f64::total_cmp);
        assert!((centroids[0] - 0.05).abs() < 1e-12 && (centroids[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let points = one_d(&[1.0, 2.0, 6.0]);
        let cs = kmeans(&points, 1, 0).unwrap();
        assert_eq!(cs.centroids, [vec![3.0]]);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let points = one_d(&[1.0, 2.0, 6.0, 7.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = lloyd(&points, None, 4, &mut rng);
        assert_eq!(run.inertia(), 0.0);
        let cs = kmeans(&points, 4, 0).unwrap();
        assert_eq!(cs.n_clusters(), 4);
        assert!(cs.dispersions.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn k_too_large_is_error() {
        assert!(kmeans(&one_d(&[1.0]), 2, 0).is_err());
        assert!(kmeans(&one_d(&[1.0]), 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_k() {
        let points = one_d(&[1.0, 1.0, 1.0, 4.0]);
        let cs = kmeans(&points, 3, 2).unwrap();
        assert!(cs.n_clusters() >= 2);
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..10 {
            let (points, _) = blobs(
                &[
                    vec![0.0, 0.0],
                    vec![2.0, 1.0],
                    vec![-1.0, 3.0],
                    vec![4.0, 4.0],
                ],
                40,
                1.2,
                seed,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let run = lloyd(&points, None, 6, &mut rng);
            for w in run.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", run.inertia_trace);
            }
        }
    }
}
