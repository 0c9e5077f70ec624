//! Clustering of detected outliers and selection of the clusters promoted to
//! new classes.

mod birch;
mod dbscan;
mod kmeans;
mod spectral;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use birch::birch;
pub use dbscan::dbscan;
pub use kmeans::{kmeans, lloyd, KMeansRun};
pub use spectral::{
    estimate_k, median_pairwise_distance, normalized_laplacian, spectral, spectral_embedding,
};

use crate::error::{Error, Result};
use crate::metrics::euclidean;

/// Cluster assignments with per-cluster centroid and dispersion.
///
/// `assignments[i]` is `None` for DBSCAN noise. Cluster ids are contiguous
/// in `0..n_clusters()` and every cluster has at least one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub assignments: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    /// Mean Euclidean distance of members to their centroid.
    pub dispersions: Vec<f64>,
}

impl ClusterSet {
    pub fn from_assignments(points: &[Vec<f64>], assignments: Vec<usize>) -> Result<Self> {
        Self::from_labels(points, assignments.into_iter().map(Some).collect())
    }

    /// Builds centroids and dispersions from raw labels; ids are compacted in
    /// increasing order so that empty ids disappear.
    pub fn from_labels(points: &[Vec<f64>], labels: Vec<Option<usize>>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Shape {
                expected: points.len(),
                actual: labels.len(),
            });
        }
        let mut ids: Vec<usize> = labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        let remap = |l: usize| ids.binary_search(&l).expect("collected above");
        let assignments: Vec<Option<usize>> = labels.iter().map(|l| l.map(remap)).collect();

        let dim = points.first().map_or(0, Vec::len);
        let mut centroids = vec![vec![0.0; dim]; ids.len()];
        let mut counts = vec![0usize; ids.len()];
        for (p, a) in points.iter().zip(&assignments) {
            if let Some(c) = *a {
                counts[c] += 1;
                centroids[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let mut dispersions = vec![0.0; ids.len()];
        for (p, a) in points.iter().zip(&assignments) {
            if let Some(c) = *a {
                dispersions[c] += euclidean(p, &centroids[c]);
            }
        }
        dispersions
            .iter_mut()
            .zip(&counts)
            .for_each(|(d, n)| *d /= *n as f64);
        Ok(Self {
            assignments,
            centroids,
            dispersions,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        self.assignments
            .iter()
            .flatten()
            .for_each(|&c| sizes[c] += 1);
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(cluster))
            .map(|(i, _)| i)
            .collect()
    }

    /// Cluster label per sample with noise as -1.
    pub fn labels_with_noise(&self) -> Vec<i64> {
        self.assignments
            .iter()
            .map(|a| a.map_or(-1, |c| c as i64))
            .collect()
    }

    /// Writes `sample_id,cluster` rows; noise is `-1`.
    pub fn write_csv<W: Write, S: AsRef<str>>(&self, sample_ids: &[S], out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["sample_id", "cluster"])?;
        for (id, label) in sample_ids.iter().zip(self.labels_with_noise()) {
            writer.write_record([id.as_ref(), &label.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    Birch,
    Dbscan,
    Spectral,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::KMeans,
        Algorithm::Birch,
        Algorithm::Dbscan,
        Algorithm::Spectral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::Birch => "birch",
            Algorithm::Dbscan => "dbscan",
            Algorithm::Spectral => "spectral",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(Algorithm::KMeans),
            "birch" => Ok(Algorithm::Birch),
            "dbscan" => Ok(Algorithm::Dbscan),
            "spectral" => Ok(Algorithm::Spectral),
            other => Err(Error::param(format!(
                "unknown clustering algorithm {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub algorithm: Algorithm,
    /// Cluster count for k-means, BIRCH and spectral; `None` picks it from
    /// the Laplacian eigengap.
    pub k: Option<usize>,
    pub eps: f64,
    pub min_pts: usize,
    pub birch_threshold: f64,
    pub branching: usize,
    pub bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Spectral,
            k: None,
            eps: 0.5,
            min_pts: 5,
            birch_threshold: 0.5,
            branching: 50,
            bandwidth: Bandwidth::MedianHeuristic,
            seed: 0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::param("cluster count k must be at least 1"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::param("dbscan eps must be positive"));
        }
        if self.min_pts == 0 {
            return Err(Error::param("dbscan min_pts must be at least 1"));
        }
        if self.birch_threshold.is_nan() || self.birch_threshold < 0.0 {
            return Err(Error::param("birch threshold must be non-negative"));
        }
        if self.branching < 2 {
            return Err(Error::param("birch branching factor must be at least 2"));
        }
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if b.is_nan() || b <= 0.0 {
                return Err(Error::param("rbf bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

/// Runs the configured algorithm. A requested `k` larger than the number of
/// points is clamped to it.
pub fn cluster(points: &[Vec<f64>], params: &ClusterParams) -> Result<ClusterSet> {
    params.validate()?;
    if points.is_empty() {
        return Ok(ClusterSet {
            assignments: Vec::new(),
            centroids: Vec::new(),
            dispersions: Vec::new(),
        });
    }
    let resolve_k = || -> Result<usize> {
        Ok(match params.k {
            Some(k) => k.min(points.len()),
            None => estimate_k(points, params.bandwidth, 10)?,
        })
    };
    match params.algorithm {
        Algorithm::KMeans => kmeans(points, resolve_k()?, params.seed),
        Algorithm::Birch => birch(
            points,
            params.birch_threshold,
            params.branching,
            resolve_k()?,
            params.seed,
        ),
        Algorithm::Dbscan => dbscan(points, params.eps, params.min_pts),
        Algorithm::Spectral => {
            let k = resolve_k()?;
            if k < 2 {
                kmeans(points, 1, params.seed)
            } else {
                spectral(points, k, params.bandwidth, params.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominantCluster {
    pub label: String,
    pub cluster: usize,
    pub members: Vec<usize>,
}

/// The `k_new` largest non-noise clusters holding at least `m_min` members,
/// labeled `novel-<iteration>-<rank>`. An empty result means nothing was
/// discovered.
pub fn select_dominant(
    cs: &ClusterSet,
    k_new: usize,
    m_min: usize,
    iteration: usize,
) -> Vec<DominantCluster> {
    let sizes = cs.sizes();
    let mut order: Vec<usize> = (0..sizes.len())
        .filter(|&c| sizes[c] >= m_min && sizes[c] > 0)
        .collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k_new)
        .enumerate()
        .map(|(rank, c)| DominantCluster {
            label: format!("novel-{iteration}-{}", rank + 1),
            cluster: c,
            members: cs.members(c),
        })
        .collect()
}

/// Scales each row to unit L2 norm; zero rows stay zero.
pub fn l2_normalize_rows(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                p.iter().map(|v| v / norm).collect()
            } else {
                p.clone()
            }
        })
        .collect()
}

/// Fraction of points whose cluster agrees with `truth` under the best
/// one-to-one matching of cluster ids to truth ids (greedy on the
/// contingency table, exact for the two-group cases used in tests).
pub fn matched_accuracy(assignments: &[Option<usize>], truth: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(truth) {
        if let Some(a) = a {
            *table.entry((*a, *t)).or_default() += 1;
        }
    }
    let mut cells: Vec<((usize, usize), usize)> = table.into_iter().collect();
    cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut used_a = std::collections::BTreeSet::new();
    let mut used_t = std::collections::BTreeSet::new();
    let mut hit = 0;
    for ((a, t), n) in cells {
        if !used_a.contains(&a) && !used_t.contains(&t) {
            used_a.insert(a);
            used_t.insert(t);
            hit += n;
        }
    }
    hit as f64 / truth.len() as f64
}
