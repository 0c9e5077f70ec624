//! Outlier-detector ensemble over the classifier's penultimate features:
//! a Mahalanobis distance with Weibull tail fits, local outlier factor, and
//! an isolation forest, combined by a 2-of-3 vote.

mod iforest;
mod lof;
mod mahalanobis;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use iforest::{c_factor, ITree, IsolationForest};
pub use lof::LofModel;
pub use mahalanobis::{mahalanobis_distance, weibull_fit, MahalanobisModel, Weibull, SHRINKAGE};

use crate::classifier::{Prediction, TrainedClassifier};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub lof_k: usize,
    /// Lower bound on the LOF threshold; the calibrated quantile is used
    /// when it is larger.
    pub lof_threshold: f64,
    pub iforest_trees: usize,
    pub iforest_subsample: usize,
    /// Largest within-class distances used in each Weibull fit.
    pub weibull_tail: usize,
    pub calibration_quantile: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            lof_k: 20,
            lof_threshold: 1.5,
            iforest_trees: 100,
            iforest_subsample: 256,
            weibull_tail: 20,
            calibration_quantile: 0.99,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lof_k < 2 {
            return Err(Error::param("lof_k must be at least 2"));
        }
        if self.iforest_trees == 0 {
            return Err(Error::param("iforest_trees must be at least 1"));
        }
        if self.iforest_subsample < 2 {
            return Err(Error::param("iforest_subsample must be at least 2"));
        }
        if self.weibull_tail < 3 {
            return Err(Error::param("weibull_tail must be at least 3"));
        }
        let q = self.calibration_quantile;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::param(format!(
                "calibration quantile must lie in (0, 1], got {q}"
            )));
        }
        if !self.lof_threshold.is_finite() {
            return Err(Error::param("lof_threshold must be finite"));
        }
        Ok(())
    }
}

/// Score at rank `ceil(q n)` of the sorted scores. Flagging strictly larger
/// scores marks at most `floor((1 - q) n)` of them.
pub fn quantile_threshold(scores: &[f64], q: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub mahalanobis: f64,
    pub lof: f64,
    pub iforest: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub mahalanobis: bool,
    pub lof: bool,
    pub iforest: bool,
}

impl Flags {
    pub fn count(self) -> usize {
        self.mahalanobis as usize + self.lof as usize + self.iforest as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Smallest Weibull tail probability over classes.
    pub mahalanobis: f64,
    pub lof: f64,
    pub iforest: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub flags: Flags,
    pub is_outlier: bool,
    pub scores: Scores,
}

impl Verdict {
    pub fn new(flags: Flags, scores: Scores) -> Self {
        Self {
            flags,
            is_outlier: flags.count() >= 2,
            scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEnsemble {
    pub config: EnsembleConfig,
    pub class_labels: Vec<String>,
    pub mahalanobis: MahalanobisModel,
    pub lof: LofModel,
    pub iforest: IsolationForest,
    pub thresholds: Thresholds,
}

/// Fits the three detectors on per-class feature vectors and calibrates each
/// threshold at the `q`-quantile of its own training scores. The Mahalanobis
/// threshold is never below `q` itself, and the LOF threshold never below
/// `lof_threshold`.
pub fn fit_ensemble(
    features_by_class: &BTreeMap<String, Vec<Vec<f64>>>,
    config: &EnsembleConfig,
) -> Result<FittedEnsemble> {
    config.validate()?;
    if let Some((label, v)) = features_by_class.iter().find(|(_, v)| v.len() < 3) {
        return Err(Error::Fit(format!(
            "class {label} has {} samples, need at least 3",
            v.len()
        )));
    }
    let total: usize = features_by_class.values().map(Vec::len).sum();
    if total <= config.lof_k {
        return Err(Error::Fit(format!(
            "{total} training samples, need more than lof_k = {}",
            config.lof_k
        )));
    }
    let dim = features_by_class.values().next().map_or(0, |v| v[0].len());
    if let Some(bad) = features_by_class
        .values()
        .flatten()
        .find(|x| x.len() != dim)
    {
        return Err(Error::Shape {
            expected: dim,
            actual: bad.len(),
        });
    }
    let classes: Vec<Vec<Vec<f64>>> = features_by_class.values().cloned().collect();
    let all: Vec<Vec<f64>> = classes.iter().flatten().cloned().collect();

    let mahalanobis = MahalanobisModel::fit(&classes, config.weibull_tail)?;
    let lof = LofModel::fit(all.clone(), config.lof_k)?;
    let iforest = IsolationForest::fit(
        &all,
        config.iforest_trees,
        config.iforest_subsample,
        config.seed,
    )?;

    let q = config.calibration_quantile;
    let m_scores: Vec<f64> = all.iter().map(|x| mahalanobis.score(x)).collect();
    let l_scores: Vec<f64> = (0..all.len())
        .into_par_iter()
        .map(|i| lof.training_score(i))
        .collect();
    let i_scores: Vec<f64> = all.iter().map(|x| iforest.score(x)).collect();
    let thresholds = Thresholds {
        mahalanobis: quantile_threshold(&m_scores, q).max(q),
        lof: quantile_threshold(&l_scores, q).max(config.lof_threshold),
        iforest: quantile_threshold(&i_scores, q),
    };
    if !(thresholds.mahalanobis.is_finite()
        && thresholds.lof.is_finite()
        && thresholds.iforest.is_finite())
    {
        return Err(Error::Numeric(format!(
            "non-finite detector threshold {thresholds:?}"
        )));
    }
    Ok(FittedEnsemble {
        config: config.clone(),
        class_labels: features_by_class.keys().cloned().collect(),
        mahalanobis,
        lof,
        iforest,
        thresholds,
    })
}

impl FittedEnsemble {
    pub fn scores(&self, x: &[f64]) -> Scores {
        Scores {
            mahalanobis: self.mahalanobis.score(x),
            lof: self.lof.score(x),
            iforest: self.iforest.score(x),
        }
    }

    pub fn verdict_from_scores(&self, scores: Scores) -> Verdict {
        let flags = Flags {
            mahalanobis: scores.mahalanobis > self.thresholds.mahalanobis,
            lof: scores.lof > self.thresholds.lof,
            iforest: scores.iforest > self.thresholds.iforest,
        };
        Verdict::new(flags, scores)
    }

    pub fn verdict(&self, x: &[f64]) -> Verdict {
        self.verdict_from_scores(self.scores(x))
    }

    /// Verdicts for the training points themselves, with LOF scored
    /// leave-one-out as during calibration. Order follows the sorted class
    /// labels, then input order within each class.
    pub fn training_verdicts(&self) -> Vec<Verdict> {
        (0..self.lof.points.len())
            .into_par_iter()
            .map(|i| {
                let x = &self.lof.points[i];
                self.verdict_from_scores(Scores {
                    mahalanobis: self.mahalanobis.score(x),
                    lof: self.lof.training_score(i),
                    iforest: self.iforest.score(x),
                })
            })
            .collect()
    }
}

/// Result of judging a batch: indices into the batch, split into accepted
/// samples (with the closed-set label) and outliers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub accepted: Vec<(usize, String)>,
    pub outliers: Vec<usize>,
    pub verdicts: Vec<Verdict>,
}

/// A trained classifier whose softmax decision is gated by the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetClassifier {
    pub classifier: TrainedClassifier,
    pub ensemble: FittedEnsemble,
}

impl OpenSetClassifier {
    /// Fits the ensemble on the penultimate features of `train`.
    pub fn fit(
        classifier: TrainedClassifier,
        train: &[(FeatureVector, String)],
        config: &EnsembleConfig,
    ) -> Result<Self> {
        let hidden: Vec<FeatureVector> = train
            .par_iter()
            .map(|(fv, _)| classifier.penultimate(fv))
            .collect::<Result<_>>()?;
        let mut by_class: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for (h, (_, label)) in hidden.into_iter().zip(train) {
            by_class.entry(label.clone()).or_default().push(h.values);
        }
        let ensemble = fit_ensemble(&by_class, config)?;
        Ok(Self {
            classifier,
            ensemble,
        })
    }

    pub fn judge(&self, fv: &FeatureVector) -> Result<(Verdict, Prediction)> {
        let h = self.classifier.penultimate(fv)?;
        Ok((
            self.ensemble.verdict(&h.values),
            self.classifier.predict_from_hidden(&h.values),
        ))
    }

    /// Splits `test` into accepted samples and outliers by the 2-of-3 vote.
    pub fn detect(&self, test: &[FeatureVector]) -> Result<Detection> {
        let judged: Vec<(Verdict, Prediction)> = test
            .par_iter()
            .map(|fv| self.judge(fv))
            .collect::<Result<_>>()?;
        let mut out = Detection::default();
        for (i, (verdict, prediction)) in judged.into_iter().enumerate() {
            if verdict.is_outlier {
                out.outliers.push(i);
            } else {
                out.accepted.push((i, prediction.label));
            }
            out.verdicts.push(verdict);
        }
        Ok(out)
    }
}
