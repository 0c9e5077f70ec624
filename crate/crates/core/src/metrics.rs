//! Clustering and open-set evaluation metrics.
//!
//! Two distinct notions of homogeneity/completeness live here and are never
//! mixed: the entropy-based pair behind [`v_measure`], and the count-ratio
//! pair behind [`ica_components`] (dominant-class share of one cluster).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::error::{Error, Result};

/// Prediction emitted for samples the outlier ensemble rejects.
pub const UNKNOWN_LABEL: &str = "unknown";

/// Per-sample truth labels for one test round, plus the labels the
/// classifier was trained on. A sample is unknown iff its label is not in
/// `known`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: Vec<String>,
    pub known: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new(labels: Vec<String>, known: impl IntoIterator<Item = String>) -> Self {
        Self {
            labels,
            known: known.into_iter().collect(),
        }
    }

    pub fn is_unknown(&self, label: &str) -> bool {
        !self.known.contains(label)
    }

    pub fn count_of(&self, label: &str) -> usize {
        self.labels.iter().filter(|l| *l == label).count()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Metric(format!(
            "length mismatch: {a} predictions vs {b} truth labels"
        )));
    }
    if a == 0 {
        return Err(Error::Metric("no samples to evaluate".into()));
    }
    Ok(())
}

/// Mean over clusters of the worst `(σ_i + σ_j) / d(c_i, c_j)` ratio.
/// Noise samples never enter a centroid, so they are ignored.
pub fn davies_bouldin(cs: &ClusterSet) -> Result<f64> {
    let n = cs.n_clusters();
    if n < 2 {
        return Err(Error::Metric(format!(
            "Davies-Bouldin needs at least 2 clusters, got {n}"
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut worst = f64::NEG_INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            let d = euclidean(&cs.centroids[i], &cs.centroids[j]);
            if d == 0.0 {
                return Err(Error::Metric(format!(
                    "clusters {i} and {j} have coincident centroids"
                )));
            }
            worst = worst.max((cs.dispersions[i] + cs.dispersions[j]) / d);
        }
        total += worst;
    }
    Ok(total / n as f64)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasureParams {
    pub beta: f64,
}

impl Default for VMeasureParams {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

/// Entropy-based homogeneity, completeness and their weighted harmonic mean
/// `(1 + β)·h·c / (β·h + c)`.
///
/// Note the weighting: β multiplies homogeneity in the denominator, so larger
/// β leans toward completeness. This differs from the β² convention of the
/// original V-measure definition but is kept as the reference formula.
pub fn v_measure_scores<C, T>(
    clusters: &[C],
    truth: &[T],
    params: VMeasureParams,
) -> Result<VMeasure>
where
    C: Ord + Clone,
    T: Ord + Clone,
{
    check_lengths(clusters.len(), truth.len())?;
    if params.beta.is_nan() || params.beta < 0.0 {
        return Err(Error::param("beta must be non-negative"));
    }
    let n = truth.len() as f64;
    let mut joint: BTreeMap<(T, C), usize> = BTreeMap::new();
    let mut class_counts: BTreeMap<T, usize> = BTreeMap::new();
    let mut cluster_counts: BTreeMap<C, usize> = BTreeMap::new();
    for (k, c) in clusters.iter().zip(truth) {
        *joint.entry((c.clone(), k.clone())).or_default() += 1;
        *class_counts.entry(c.clone()).or_default() += 1;
        *cluster_counts.entry(k.clone()).or_default() += 1;
    }
    let entropy = |counts: &mut dyn Iterator<Item = &usize>| -> f64 {
        counts
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_class = entropy(&mut class_counts.values());
    let h_cluster = entropy(&mut cluster_counts.values());
    let mut h_class_given_cluster = 0.0;
    let mut h_cluster_given_class = 0.0;
    for ((c, k), &count) in &joint {
        let p = count as f64 / n;
        h_class_given_cluster -= p * (count as f64 / cluster_counts[k] as f64).ln();
        h_cluster_given_class -= p * (count as f64 / class_counts[c] as f64).ln();
    }
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        1.0 - h_class_given_cluster / h_class
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        1.0 - h_cluster_given_class / h_cluster
    };
    let denom = params.beta * homogeneity + completeness;
    let v_measure = if denom == 0.0 {
        0.0
    } else {
        (1.0 + params.beta) * homogeneity * completeness / denom
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v_measure,
    })
}

pub fn v_measure<C, T>(clusters: &[C], truth: &[T], params: VMeasureParams) -> Result<f64>
where
    C: Ord + Clone,
    T: Ord + Clone,
{
    v_measure_scores(clusters, truth, params).map(|v| v.v_measure)
}

/// Fraction of predictions that differ from the truth.
pub fn closed_error<P: AsRef<str>, T: AsRef<str>>(predictions: &[P], truth: &[T]) -> Result<f64> {
    check_lengths(predictions.len(), truth.len())?;
    let wrong = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.as_ref() != t.as_ref())
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetError {
    /// Misclassification rate over known-class samples.
    pub closed: f64,
    /// Fraction of unknown-class samples not predicted as [`UNKNOWN_LABEL`].
    pub unknown_miss: f64,
    pub total: f64,
    pub n_known: usize,
    pub n_unknown: usize,
}

/// Closed-set error over known samples plus the unknown miss rate, in [0, 2].
pub fn open_set_error<P: AsRef<str>>(
    predictions: &[P],
    truth: &GroundTruth,
) -> Result<OpenSetError> {
    check_lengths(predictions.len(), truth.labels.len())?;
    let (mut n_known, mut known_wrong, mut n_unknown, mut missed) =
        (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predictions.iter().zip(&truth.labels) {
        let p = p.as_ref();
        if truth.is_unknown(t) {
            n_unknown += 1;
            missed += usize::from(p != UNKNOWN_LABEL);
        } else {
            n_known += 1;
            known_wrong += usize::from(p != t);
        }
    }
    if n_unknown == 0 {
        return Err(Error::Metric(
            "open-set error needs at least one unknown-class sample".into(),
        ));
    }
    if n_known == 0 {
        return Err(Error::Metric(
            "open-set error needs at least one known-class sample".into(),
        ));
    }
    let closed = known_wrong as f64 / n_known as f64;
    let unknown_miss = missed as f64 / n_unknown as f64;
    Ok(OpenSetError {
        closed,
        unknown_miss,
        total: closed + unknown_miss,
        n_known,
        n_unknown,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaBreakdown {
    pub homogeneity: f64,
    pub completeness: f64,
    pub uia: f64,
    pub ica: f64,
    pub predominant: String,
    pub n_c_given_k: usize,
    pub n_k: usize,
    pub n_c: usize,
    pub n_u_given_k: usize,
}

/// Count-ratio scores of one discovered cluster.
///
/// `members` are the truth labels of the cluster's samples; class totals
/// `N_c` come from the whole round in `truth`. Ties for the predominant class
/// go to the lexicographically smallest label.
pub fn ica_components<S: AsRef<str>>(members: &[S], truth: &GroundTruth) -> Result<IcaBreakdown> {
    if members.is_empty() {
        return Err(Error::Metric(
            "ICA is undefined for an empty cluster".into(),
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        *counts.entry(m.as_ref()).or_default() += 1;
    }
    let (predominant, n_c_given_k) = counts
        .iter()
        .fold(None::<(&str, usize)>, |best, (&label, &count)| match best {
            Some((_, c)) if c >= count => best,
            _ => Some((label, count)),
        })
        .expect("non-empty cluster");
    let n_c = truth.count_of(predominant);
    if n_c < n_c_given_k {
        return Err(Error::Metric(format!(
            "truth lists {n_c} samples of {predominant:?} but the cluster holds {n_c_given_k}"
        )));
    }
    let n_k = members.len();
    let n_u_given_k = members
        .iter()
        .filter(|m| truth.is_unknown(m.as_ref()))
        .count();
    let homogeneity = n_c_given_k as f64 / n_k as f64;
    let completeness = n_c_given_k as f64 / n_c as f64;
    let uia = n_u_given_k as f64 / n_k as f64;
    Ok(IcaBreakdown {
        homogeneity,
        completeness,
        uia,
        ica: (homogeneity + completeness + uia) / 3.0,
        predominant: predominant.to_owned(),
        n_c_given_k,
        n_k,
        n_c,
        n_u_given_k,
    })
}

/// Unweighted mean of per-cluster ICA scores.
pub fn ica<S: AsRef<str>>(clusters: &[Vec<S>], truth: &GroundTruth) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::Metric("ICA needs at least one cluster".into()));
    }
    let mut total = 0.0;
    for members in clusters {
        total += ica_components(members, truth)?.ica;
    }
    Ok(total / clusters.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
}

/// Accuracy and macro-F1 over `labels`. Classes never predicted and never
/// true still count, with F1 = 0.
pub fn classification_report<P, T, L>(
    predictions: &[P],
    truth: &[T],
    labels: &[L],
) -> Result<ClassificationReport>
where
    P: AsRef<str>,
    T: AsRef<str>,
    L: AsRef<str>,
{
    check_lengths(predictions.len(), truth.len())?;
    if labels.is_empty() {
        return Err(Error::Metric("label set is empty".into()));
    }
    let mut tp: HashMap<&str, usize> = HashMap::new();
    let mut predicted: HashMap<&str, usize> = HashMap::new();
    let mut actual: HashMap<&str, usize> = HashMap::new();
    let mut correct = 0;
    for (p, t) in predictions.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        *predicted.entry(p).or_default() += 1;
        *actual.entry(t).or_default() += 1;
        if p == t {
            correct += 1;
            *tp.entry(p).or_default() += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassScores> = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            let hits = tp.get(l).copied().unwrap_or(0);
            let support = actual.get(l).copied().unwrap_or(0);
            let precision = ratio(hits, predicted.get(l).copied().unwrap_or(0));
            let recall = ratio(hits, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                label: l.to_owned(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(ClassificationReport {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth_of(labels: &[&str], known: &[&str]) -> GroundTruth {
        GroundTruth::new(
            labels.iter().map(|s| s.to_string()).collect(),
            known.iter().map(|s| s.to_string()),
        )
    }

    fn two_cluster_set() -> ClusterSet {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![4.0, 0.0],
            vec![4.0, 1.0],
        ];
        ClusterSet::from_assignments(&points, vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn davies_bouldin_hand_example() {
        assert!((davies_bouldin(&two_cluster_set()).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn davies_bouldin_singletons_and_errors() {
        let points = vec![vec![0.0], vec![3.0]];
        let cs = ClusterSet::from_assignments(&points, vec![0, 1]).unwrap();
        assert_eq!(davies_bouldin(&cs).unwrap(), 0.0);
        let one = ClusterSet::from_assignments(&points, vec![0, 0]).unwrap();
        assert!(matches!(davies_bouldin(&one), Err(Error::Metric(_))));
        let same = vec![vec![1.0], vec![1.0]];
        let coincident = ClusterSet::from_assignments(&same, vec![0, 1]).unwrap();
        let err = davies_bouldin(&coincident).unwrap_err().to_string();
        assert!(err.contains("clusters 0 and 1"), "{err}");
    }

    #[test]
    fn v_measure_cases() {
        let t = ["A", "A", "B", "B"];
        let p = VMeasureParams::default();
        assert!((v_measure(&[0, 0, 1, 1], &t, p).unwrap() - 1.0).abs() < 1e-12);
        let lumped = v_measure_scores(&[0, 0, 0, 0], &t, p).unwrap();
        assert!(lumped.homogeneity.abs() < 1e-12);
        assert_eq!(lumped.completeness, 1.0);
        assert!(lumped.v_measure.abs() < 1e-12);
        // H(K|C) = ln 2 and H(K) = ln 4, so completeness is 1/2, not 0.
        let split = v_measure_scores(&[0, 1, 2, 3], &t, p).unwrap();
        assert_eq!(split.homogeneity, 1.0);
        assert!((split.completeness - 0.5).abs() < 1e-12);
        assert!((split.v_measure - 2.0 / 3.0).abs() < 1e-12);
        assert!(v_measure(&[0, 1], &t, p).is_err());
    }

    #[test]
    fn v_measure_beta_weighting() {
        // h = 1, c = 0.5; with β = 0 the printed formula reduces to h.
        let t = ["A", "A", "B", "B"];
        let v0 = v_measure(&[0, 1, 2, 3], &t, VMeasureParams { beta: 0.0 }).unwrap();
        assert!((v0 - 1.0).abs() < 1e-12);
        let v3 = v_measure(&[0, 1, 2, 3], &t, VMeasureParams { beta: 3.0 }).unwrap();
        assert!((v3 - 4.0 * 0.5 / 3.5).abs() < 1e-12);
    }

    #[test]
    fn closed_error_cases() {
        assert_eq!(closed_error(&["a", "b"], &["a", "b"]).unwrap(), 0.0);
        assert_eq!(
            closed_error(&["a", "b", "c", "x"], &["a", "b", "c", "d"]).unwrap(),
            0.25
        );
        assert_eq!(closed_error(&["x", "y"], &["a", "b"]).unwrap(), 1.0);
        assert!(closed_error(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn open_set_error_cases() {
        let truth = truth_of(&["a", "b", "c", "d", "u", "v"], &["a", "b", "c", "d"]);
        let perfect = ["a", "b", "c", "d", UNKNOWN_LABEL, UNKNOWN_LABEL];
        assert_eq!(open_set_error(&perfect, &truth).unwrap().total, 0.0);
        let mixed = ["a", "b", "c", "x", UNKNOWN_LABEL, "a"];
        let e = open_set_error(&mixed, &truth).unwrap();
        assert_eq!(e.total, 0.75);
        assert_eq!(e.closed + e.unknown_miss, e.total);
        let bad = ["b", "a", "d", "c", "a", "b"];
        assert_eq!(open_set_error(&bad, &truth).unwrap().total, 2.0);
        let no_unknown = truth_of(&["a"], &["a"]);
        assert!(matches!(
            open_set_error(&["a"], &no_unknown),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn ica_cases() {
        let mut labels = vec!["X"; 6];
        labels.extend(["Y"; 4]);
        labels.extend(["K"; 8]);
        let truth = truth_of(&labels, &["K"]);
        let b = ica_components(&["X", "X", "X", "X", "X", "X", "Y", "K"], &truth).unwrap();
        assert_eq!((b.homogeneity, b.completeness, b.uia), (0.75, 1.0, 0.875));
        assert!((b.ica - 0.875).abs() < 1e-12);

        let k = ica_components(&["K"; 4], &truth).unwrap();
        assert_eq!((k.homogeneity, k.completeness, k.uia), (1.0, 0.5, 0.0));

        let pure_truth = truth_of(&["Z"; 10], &["K"]);
        let pure = ica_components(&["Z"; 10], &pure_truth).unwrap();
        assert_eq!(pure.ica, 1.0);

        assert!(ica_components::<&str>(&[], &truth).is_err());
        assert!(ica::<&str>(&[], &truth).is_err());
    }

    #[test]
    fn ica_averages_clusters() {
        // pure unknown cluster (1.0) and a half-complete known cluster:
        // (1 + 0.5 + 0) / 3 = 0.5
        let truth = truth_of(&["U", "U", "K", "K"], &["K"]);
        let score = ica(&[vec!["U", "U"], vec!["K"]], &truth).unwrap();
        assert!((score - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ica_tie_breaks_lexicographically() {
        let truth = truth_of(&["B", "A", "A"], &[]);
        let b = ica_components(&["B", "A"], &truth).unwrap();
        assert_eq!(b.predominant, "A");
        assert_eq!(b.completeness, 0.5);
    }

    #[test]
    fn classification_report_cases() {
        let r = classification_report(&["A", "B", "B", "B"], &["A", "A", "B", "B"], &["A", "B"])
            .unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);

        let perfect = classification_report(&["A", "B"], &["A", "B"], &["A", "B"]).unwrap();
        assert_eq!((perfect.accuracy, perfect.macro_f1), (1.0, 1.0));

        let missing = classification_report(&["A", "A"], &["A", "C"], &["A", "C"]).unwrap();
        assert_eq!(missing.per_class[1].f1, 0.0);
        assert!((missing.macro_f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!(classification_report(&["A"], &["A", "B"], &["A"]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn v_measure_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..3), 1..30),
            shift in 1usize..7,
        ) {
            let clusters: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<String> = pairs.iter().map(|p| format!("c{}", p.1)).collect();
            let permuted: Vec<usize> = clusters.iter().map(|k| (k + shift) % 4 + 10).collect();
            let renamed: Vec<String> = pairs.iter().map(|p| format!("z{}", 2 - p.1)).collect();
            let p = VMeasureParams::default();
            let base = v_measure(&clusters, &truth, p).unwrap();
            proptest::prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
            proptest::prop_assert!((base - v_measure(&permuted, &truth, p).unwrap()).abs() < 1e-12);
            proptest::prop_assert!((base - v_measure(&clusters, &renamed, p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn open_set_error_decomposes(
            rows in proptest::collection::vec((0usize..4, 0usize..5), 2..40),
        ) {
            let labels = ["a", "b", "u", "v"];
            let preds = ["a", "b", "u", "v", UNKNOWN_LABEL];
            let truth_labels: Vec<String> = rows.iter().map(|r| labels[r.0].to_string()).collect();
            let predictions: Vec<&str> = rows.iter().map(|r| preds[r.1]).collect();
            let truth = GroundTruth::new(truth_labels, ["a".to_string(), "b".to_string()]);
            if let Ok(e) = open_set_error(&predictions, &truth) {
                proptest::prop_assert_eq!(e.total, e.closed + e.unknown_miss);
                proptest::prop_assert!((0.0..=2.0).contains(&e.total));
            }
        }
    }
}
