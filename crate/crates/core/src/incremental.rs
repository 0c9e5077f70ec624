//! The open-set incremental loop: train, test against fresh unknown
//! classes, cluster the outliers, promote the dominant clusters under new
//! labels, retrain, repeat.
//!
//! Ground-truth author labels of test documents are read only to build the
//! evaluation set and the report. Promoted documents enter training under
//! their `novel-*` pseudo-label.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, NetworkConfig, TrainedClassifier};
use crate::clustering::{cluster, l2_normalize_rows, select_dominant, ClusterParams, ClusterSet};
use crate::corpus::{split_point, LabeledCorpus};
use crate::error::{Error, Result};
use crate::features::{vectorize_all, FeatureVector, VectorizerSpec};
use crate::metrics::{
    classification_report, davies_bouldin, ica_components, open_set_error, v_measure, GroundTruth,
    IcaBreakdown, OpenSetError, VMeasureParams, UNKNOWN_LABEL,
};
use crate::novelty::{EnsembleConfig, OpenSetClassifier};

/// Prefix reserved for pseudo-labels of promoted clusters.
pub const NOVEL_PREFIX: &str = "novel-";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub k_seed: usize,
    pub k_unknown: usize,
    pub k_new: usize,
    pub n_max: usize,
    /// Stop once post-retrain macro-F1 drops below this.
    pub delta: f64,
    /// Smallest cluster that may be promoted.
    pub m_min: usize,
    pub train_fraction: f64,
    /// Estimate the cluster count from the eigengap instead of using
    /// `k_unknown` when `clustering.k` is unset.
    pub blind: bool,
    pub vectorizer: VectorizerSpec,
    pub clustering: ClusterParams,
    pub ensemble: EnsembleConfig,
    pub network: NetworkConfig,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            k_seed: 5,
            k_unknown: 3,
            k_new: 3,
            n_max: 5,
            delta: 0.4,
            m_min: 10,
            train_fraction: 0.7,
            blind: false,
            vectorizer: VectorizerSpec::default(),
            clustering: ClusterParams::default(),
            ensemble: EnsembleConfig::default(),
            network: NetworkConfig::default(),
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_seed < 2 {
            return Err(Error::param("k_seed must be at least 2"));
        }
        if self.k_unknown == 0 {
            return Err(Error::param("k_unknown must be at least 1"));
        }
        if self.k_new == 0 || self.k_new > self.k_unknown {
            return Err(Error::param(format!(
                "k_new must lie in 1..=k_unknown ({}), got {}",
                self.k_unknown, self.k_new
            )));
        }
        if self.n_max == 0 {
            return Err(Error::param("n_max must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::param(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param("train_fraction must lie in (0, 1)"));
        }
        self.vectorizer.validate()?;
        self.clustering.validate()?;
        self.ensemble.validate()?;
        self.network.validate()?;
        if self.network.input_dim != self.vectorizer.dim {
            return Err(Error::param(format!(
                "network input_dim {} differs from vectorizer dim {}",
                self.network.input_dim, self.vectorizer.dim
            )));
        }
        Ok(())
    }

    pub fn cluster_params(&self) -> ClusterParams {
        let mut params = self.clustering.clone();
        if params.k.is_none() && !self.blind {
            params.k = Some(self.k_unknown);
        }
        params
    }
}

/// Flags outliers among `test` given the current model and its training set.
pub trait Detector {
    fn flag(
        &self,
        model: &TrainedClassifier,
        train: &[(FeatureVector, String)],
        test: &[FeatureVector],
        test_ids: &[String],
    ) -> Result<Vec<bool>>;
}

/// Groups outlier feature vectors.
pub trait Clusterer {
    fn cluster(&self, features: &[Vec<f64>], ids: &[String]) -> Result<ClusterSet>;
}

impl Detector for EnsembleConfig {
    fn flag(
        &self,
        model: &TrainedClassifier,
        train: &[(FeatureVector, String)],
        test: &[FeatureVector],
        _: &[String],
    ) -> Result<Vec<bool>> {
        let open = OpenSetClassifier::fit(model.clone(), train, self)?;
        Ok(open
            .detect(test)?
            .verdicts
            .iter()
            .map(|v| v.is_outlier)
            .collect())
    }
}

/// Clusters L2-normalized rows.
impl Clusterer for ClusterParams {
    fn cluster(&self, features: &[Vec<f64>], _: &[String]) -> Result<ClusterSet> {
        cluster(&l2_normalize_rows(features), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub label: String,
    pub size: usize,
    /// Most common ground-truth author among the members (report only).
    pub majority: String,
    pub majority_count: usize,
}

/// Outlier set of one round, kept for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierSnapshot {
    pub ids: Vec<String>,
    pub features: Vec<Vec<f64>>,
    /// Cluster index per outlier, -1 for noise.
    pub clusters: Vec<i64>,
    pub truth: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub injected: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_outliers: usize,
    /// Share of injected-class documents that landed in the outlier set.
    pub unknown_detection_rate: f64,
    /// Share of known-class documents that landed in the outlier set.
    pub known_false_alarm_rate: f64,
    pub pre_accuracy: f64,
    pub pre_macro_f1: f64,
    pub post_accuracy: f64,
    pub post_macro_f1: f64,
    pub epsilon_os: OpenSetError,
    pub n_clusters: usize,
    pub davies_bouldin: Option<f64>,
    pub v_measure: Option<f64>,
    pub ica: Option<f64>,
    pub ica_clusters: Vec<IcaBreakdown>,
    pub promoted: Vec<Promotion>,
    pub n_classes: usize,
    #[serde(skip)]
    pub outliers: OutlierSnapshot,
}

impl IterationReport {
    pub fn discovered(&self) -> bool {
        !self.promoted.is_empty()
    }
}

/// Everything carried between iterations. Documents are referred to by
/// their index in the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    pub iteration: usize,
    /// Seed labels followed by pseudo-labels in promotion order.
    pub classes: Vec<String>,
    /// Training documents with their current (possibly pseudo) label.
    pub train: Vec<(usize, String)>,
    /// Held-out documents of classes the model is meant to know.
    pub holdout: Vec<usize>,
    /// Pool classes not yet injected, in injection order.
    pub remaining_pool: Vec<String>,
    /// Ground-truth authors the model is meant to know: the seed classes
    /// plus the majority author of every promotion.
    pub known_truth: BTreeSet<String>,
    /// Pseudo-label to majority author, used when scoring predictions.
    pub label_map: BTreeMap<String, String>,
    #[serde(skip)]
    pub model: Option<TrainedClassifier>,
    pub history: Vec<IterationReport>,
}

const STATE_FILE: &str = "state.json";
const MODEL_FILE: &str = "model.json";

impl LearningState {
    /// Seeded split of the corpus: `k_seed` known classes with a
    /// `train_fraction` training share each; every other class is pool.
    pub fn initial(corpus: &LabeledCorpus, config: &LoopConfig) -> Result<Self> {
        config.validate()?;
        let needed = config.k_seed + config.k_unknown;
        if corpus.classes().len() < needed {
            return Err(Error::Partition(format!(
                "corpus has {} classes but k_seed + k_unknown = {needed}",
                corpus.classes().len()
            )));
        }
        if let Some(bad) = corpus
            .classes()
            .iter()
            .find(|c| c.starts_with(NOVEL_PREFIX))
        {
            return Err(Error::Format(format!(
                "label {bad:?} uses the reserved prefix {NOVEL_PREFIX:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order = corpus.classes().to_vec();
        order.shuffle(&mut rng);
        let remaining_pool = order.split_off(config.k_seed);
        let mut seeds = order;
        seeds.sort();

        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, d) in corpus.documents().iter().enumerate() {
            by_label.entry(d.label.as_str()).or_default().push(i);
        }
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for label in &seeds {
            let mut docs = by_label[label.as_str()].clone();
            docs.shuffle(&mut rng);
            let cut = split_point(docs.len(), config.train_fraction);
            train.extend(docs[..cut].iter().map(|&i| (i, label.clone())));
            holdout.extend_from_slice(&docs[cut..]);
        }
        Ok(Self {
            iteration: 0,
            classes: seeds.clone(),
            train,
            holdout,
            remaining_pool,
            known_truth: seeds.into_iter().collect(),
            label_map: BTreeMap::new(),
            model: None,
            history: Vec::new(),
        })
    }

    pub fn pool_exhausted(&self, config: &LoopConfig) -> bool {
        self.remaining_pool.len() < config.k_unknown
    }

    /// Writes `state.json`, plus `model.json` when a model is held.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = std::io::BufWriter::new(std::fs::File::create(dir.join(STATE_FILE))?);
        serde_json::to_writer_pretty(file, self)?;
        if let Some(model) = &self.model {
            model.save(&dir.join(MODEL_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STATE_FILE);
        let file = std::fs::File::open(&path).map_err(|source| Error::Load { path, source })?;
        let mut state: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        let model_path = dir.join(MODEL_FILE);
        if model_path.exists() {
            state.model = Some(TrainedClassifier::load(&model_path)?);
        }
        Ok(state)
    }
}

/// Corpus together with one feature vector per document.
pub struct PreparedCorpus<'a> {
    pub corpus: &'a LabeledCorpus,
    pub vectors: Vec<FeatureVector>,
}

impl<'a> PreparedCorpus<'a> {
    pub fn new(corpus: &'a LabeledCorpus, spec: &VectorizerSpec) -> Result<Self> {
        Ok(Self {
            corpus,
            vectors: vectorize_all(corpus.documents(), spec)?,
        })
    }

    fn truth(&self, i: usize) -> &str {
        &self.corpus.documents()[i].label
    }

    fn samples(&self, docs: &[(usize, String)]) -> Vec<(FeatureVector, String)> {
        docs.iter()
            .map(|(i, l)| (self.vectors[*i].clone(), l.clone()))
            .collect()
    }
}

fn map_label(label: &str, label_map: &BTreeMap<String, String>) -> String {
    label_map
        .get(label)
        .cloned()
        .unwrap_or_else(|| label.to_owned())
}

/// Accuracy and macro-F1 of `model` on documents `eval`, with pseudo-labels
/// mapped to their majority author and F1 averaged over every label that
/// occurs as truth or prediction.
fn closed_set_scores(
    model: &TrainedClassifier,
    data: &PreparedCorpus,
    eval: &[usize],
    label_map: &BTreeMap<String, String>,
) -> Result<(f64, f64)> {
    if eval.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut predictions = Vec::with_capacity(eval.len());
    for &i in eval {
        predictions.push(map_label(
            &model.predict(&data.vectors[i])?.label,
            label_map,
        ));
    }
    let truth: Vec<&str> = eval.iter().map(|&i| data.truth(i)).collect();
    let labels: BTreeSet<&str> = truth
        .iter()
        .copied()
        .chain(predictions.iter().map(String::as_str))
        .collect();
    let labels: Vec<&str> = labels.into_iter().collect();
    let report = classification_report(&predictions, &truth, &labels)?;
    Ok((report.accuracy, report.macro_f1))
}

fn majority(labels: &[&str]) -> (String, usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    labels
        .iter()
        .for_each(|l| *counts.entry(l).or_default() += 1);
    let mut best = ("", 0);
    for (l, c) in counts {
        if c > best.1 {
            best = (l, c);
        }
    }
    (best.0.to_owned(), best.1)
}

/// One pass of the loop body. Fails with a partition error when fewer than
/// `k_unknown` pool classes remain.
pub fn run_iteration(
    mut state: LearningState,
    data: &PreparedCorpus,
    config: &LoopConfig,
    detector: &dyn Detector,
    clusterer: &dyn Clusterer,
) -> Result<(LearningState, IterationReport)> {
    if state.pool_exhausted(config) {
        return Err(Error::Partition(format!(
            "{} pool classes left, need k_unknown = {}",
            state.remaining_pool.len(),
            config.k_unknown
        )));
    }
    let iteration = state.iteration + 1;
    let network = |salt: usize| NetworkConfig {
        seed: config.network.seed ^ config.seed.wrapping_mul(0x9e37_79b9) ^ salt as u64,
        ..config.network.clone()
    };
    let train_samples = data.samples(&state.train);
    let model = match state.model.take() {
        Some(m) => m,
        None => train(&train_samples, &network(0))?,
    };

    let injected: Vec<String> = state.remaining_pool.drain(..config.k_unknown).collect();
    let injected_set: BTreeSet<&str> = injected.iter().map(String::as_str).collect();
    let mut test: Vec<usize> = state.holdout.clone();
    test.extend((0..data.corpus.len()).filter(|&i| injected_set.contains(data.truth(i))));
    let test_vectors: Vec<FeatureVector> = test.iter().map(|&i| data.vectors[i].clone()).collect();
    let test_ids: Vec<String> = test
        .iter()
        .map(|&i| data.corpus.documents()[i].id.clone())
        .collect();

    let flags = detector.flag(&model, &train_samples, &test_vectors, &test_ids)?;
    let outliers: Vec<usize> = (0..test.len()).filter(|&j| flags[j]).collect();

    // open-set error on the full test set
    let truth_test: Vec<String> = test.iter().map(|&i| data.truth(i).to_owned()).collect();
    let ground = GroundTruth::new(truth_test.clone(), state.known_truth.iter().cloned());
    let mut os_predictions = Vec::with_capacity(test.len());
    for (j, fv) in test_vectors.iter().enumerate() {
        if flags[j] {
            os_predictions.push(UNKNOWN_LABEL.to_owned());
        } else {
            os_predictions.push(map_label(&model.predict(fv)?.label, &state.label_map));
        }
    }
    let epsilon_os = open_set_error(&os_predictions, &ground)?;
    let n_unknown = epsilon_os.n_unknown;
    let unknown_hits = outliers
        .iter()
        .filter(|&&j| ground.is_unknown(&truth_test[j]))
        .count();
    let unknown_detection_rate = unknown_hits as f64 / n_unknown as f64;
    let known_false_alarm_rate = (outliers.len() - unknown_hits) as f64 / epsilon_os.n_known as f64;

    // cluster the outliers in penultimate space
    let mut outlier_features = Vec::with_capacity(outliers.len());
    for &j in &outliers {
        outlier_features.push(model.penultimate(&test_vectors[j])?.values);
    }
    let outlier_ids: Vec<String> = outliers.iter().map(|&j| test_ids[j].clone()).collect();
    let outlier_truth: Vec<String> = outliers.iter().map(|&j| truth_test[j].clone()).collect();
    let clusters = if outliers.is_empty() {
        ClusterSet::from_labels(&[], Vec::new())?
    } else {
        clusterer.cluster(&outlier_features, &outlier_ids)?
    };
    let noise_labels = clusters.labels_with_noise();
    let davies_bouldin = if clusters.n_clusters() >= 2 {
        davies_bouldin(&clusters).ok()
    } else {
        None
    };
    let v = if outliers.is_empty() {
        None
    } else {
        Some(v_measure(
            &noise_labels,
            &outlier_truth,
            VMeasureParams::default(),
        )?)
    };
    let mut ica_clusters = Vec::new();
    for c in 0..clusters.n_clusters() {
        let members: Vec<&str> = clusters
            .members(c)
            .iter()
            .map(|&m| outlier_truth[m].as_str())
            .collect();
        ica_clusters.push(ica_components(&members, &ground)?);
    }
    let ica = (!ica_clusters.is_empty())
        .then(|| ica_clusters.iter().map(|b| b.ica).sum::<f64>() / ica_clusters.len() as f64);

    // promote dominant clusters
    let dominant = select_dominant(&clusters, config.k_new, config.m_min, iteration);
    let mut promoted_docs: BTreeSet<usize> = BTreeSet::new();
    let mut promoted = Vec::new();
    for d in &dominant {
        let members: Vec<usize> = d.members.iter().map(|&m| test[outliers[m]]).collect();
        let truths: Vec<&str> = members.iter().map(|&i| data.truth(i)).collect();
        let (maj, count) = majority(&truths);
        for &i in &members {
            state.train.push((i, d.label.clone()));
            promoted_docs.insert(i);
        }
        state.classes.push(d.label.clone());
        state.label_map.insert(d.label.clone(), maj.clone());
        promoted.push(Promotion {
            label: d.label.clone(),
            size: members.len(),
            majority: maj,
            majority_count: count,
        });
    }

    let post_model = if promoted.is_empty() {
        model.clone()
    } else {
        train(&data.samples(&state.train), &network(iteration))?
    };

    let eval: Vec<usize> = test.clone();
    let pre_map: BTreeMap<String, String> = state
        .label_map
        .iter()
        .filter(|(k, _)| !dominant.iter().any(|d| &d.label == *k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let (pre_accuracy, pre_macro_f1) = closed_set_scores(&model, data, &eval, &pre_map)?;
    let (post_accuracy, post_macro_f1) =
        closed_set_scores(&post_model, data, &eval, &state.label_map)?;

    // later rounds test the classes learned so far
    let newly_known: BTreeSet<&str> = promoted.iter().map(|p| p.majority.as_str()).collect();
    state.holdout.retain(|i| !promoted_docs.contains(i));
    for &i in &test {
        let t = data.truth(i);
        if injected_set.contains(t) && newly_known.contains(t) && !promoted_docs.contains(&i) {
            state.holdout.push(i);
        }
    }
    for p in &promoted {
        state.known_truth.insert(p.majority.clone());
    }

    let report = IterationReport {
        iteration,
        injected,
        n_train: state.train.len(),
        n_test: test.len(),
        n_outliers: outliers.len(),
        unknown_detection_rate,
        known_false_alarm_rate,
        pre_accuracy,
        pre_macro_f1,
        post_accuracy,
        post_macro_f1,
        epsilon_os,
        n_clusters: clusters.n_clusters(),
        davies_bouldin,
        v_measure: v,
        ica,
        ica_clusters,
        promoted,
        n_classes: state.classes.len(),
        outliers: OutlierSnapshot {
            ids: outlier_ids,
            features: outlier_features,
            clusters: noise_labels,
            truth: outlier_truth,
        },
    };
    state.iteration = iteration;
    state.model = Some(post_model);
    state.history.push(report.clone());
    Ok((state, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    PoolExhausted,
    MaxIterations,
    BelowDelta,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: TrainedClassifier,
    pub state: LearningState,
    pub reports: Vec<IterationReport>,
    pub stop: StopReason,
}

/// Runs the loop with the ensemble detector and the configured clusterer.
pub fn run(corpus: &LabeledCorpus, config: &LoopConfig) -> Result<RunOutcome> {
    let data = PreparedCorpus::new(corpus, &config.vectorizer)?;
    run_with(&data, config, &config.ensemble, &config.cluster_params())
}

/// Loop driver with pluggable detector and clusterer.
pub fn run_with(
    data: &PreparedCorpus,
    config: &LoopConfig,
    detector: &dyn Detector,
    clusterer: &dyn Clusterer,
) -> Result<RunOutcome> {
    let state = LearningState::initial(data.corpus, config)?;
    run_from(state, data, config, detector, clusterer, &mut |_, _| Ok(()))
}

/// Continues the loop from `state`, calling `on_iteration` after every
/// completed round. Reports already in `state.history` are not repeated in
/// the outcome.
pub fn run_from(
    mut state: LearningState,
    data: &PreparedCorpus,
    config: &LoopConfig,
    detector: &dyn Detector,
    clusterer: &dyn Clusterer,
    on_iteration: &mut dyn FnMut(&LearningState, &IterationReport) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    let mut reports = Vec::new();
    let stop = loop {
        if state.pool_exhausted(config) {
            break StopReason::PoolExhausted;
        }
        if state.iteration >= config.n_max {
            break StopReason::MaxIterations;
        }
        let (next, report) = run_iteration(state, data, config, detector, clusterer)?;
        state = next;
        on_iteration(&state, &report)?;
        let below = report.post_macro_f1 < config.delta;
        reports.push(report);
        if below {
            break StopReason::BelowDelta;
        }
    };
    let model = match state.model.clone() {
        Some(m) => m,
        None => train(&data.samples(&state.train), &config.network)?,
    };
    Ok(RunOutcome {
        model,
        state,
        reports,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticParams};
    use std::collections::HashMap;

    /// Flags exactly the documents whose author is outside `known`.
    struct OracleDetector {
        truth: HashMap<String, String>,
        known: BTreeSet<String>,
    }

    impl Detector for OracleDetector {
        fn flag(
            &self,
            _: &TrainedClassifier,
            _: &[(FeatureVector, String)],
            _: &[FeatureVector],
            ids: &[String],
        ) -> Result<Vec<bool>> {
            Ok(ids
                .iter()
                .map(|id| !self.known.contains(&self.truth[id]))
                .collect())
        }
    }

    /// Groups documents by author.
    struct OracleClusterer {
        truth: HashMap<String, String>,
    }

    impl Clusterer for OracleClusterer {
        fn cluster(&self, features: &[Vec<f64>], ids: &[String]) -> Result<ClusterSet> {
            let authors: BTreeSet<&String> = ids.iter().map(|id| &self.truth[id]).collect();
            let authors: Vec<&String> = authors.into_iter().collect();
            let labels = ids
                .iter()
                .map(|id| authors.binary_search(&&self.truth[id]).unwrap())
                .collect();
            ClusterSet::from_assignments(features, labels)
        }
    }

    struct FlagNothing;

    impl Detector for FlagNothing {
        fn flag(
            &self,
            _: &TrainedClassifier,
            _: &[(FeatureVector, String)],
            test: &[FeatureVector],
            _: &[String],
        ) -> Result<Vec<bool>> {
            Ok(vec![false; test.len()])
        }
    }

    fn small_corpus(authors: usize, seed: u64) -> LabeledCorpus {
        generate_synthetic(&SyntheticParams {
            num_authors: authors,
            docs_per_author: 30,
            doc_len: 120,
            vocab_size: 2000,
            style_skew: 0.8,
            seed,
        })
        .unwrap()
    }

    fn quick_config() -> LoopConfig {
        LoopConfig {
            k_seed: 4,
            k_unknown: 1,
            k_new: 1,
            n_max: 1,
            m_min: 5,
            vectorizer: VectorizerSpec {
                dim: 512,
                ..Default::default()
            },
            network: NetworkConfig {
                input_dim: 512,
                penultimate_dim: 16,
                epochs: 15,
                ..Default::default()
            },
            ensemble: EnsembleConfig {
                lof_k: 10,
                iforest_trees: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn oracles(corpus: &LabeledCorpus, known: &[String]) -> (OracleDetector, OracleClusterer) {
        let truth: HashMap<String, String> = corpus
            .documents()
            .iter()
            .map(|d| (d.id.clone(), d.label.clone()))
            .collect();
        (
            OracleDetector {
                truth: truth.clone(),
                known: known.iter().cloned().collect(),
            },
            OracleClusterer { truth },
        )
    }

    #[test]
    fn oracle_components_promote_the_injected_author() {
        let corpus = small_corpus(7, 1);
        let config = quick_config();
        let data = PreparedCorpus::new(&corpus, &config.vectorizer).unwrap();
        let state = LearningState::initial(&corpus, &config).unwrap();
        let injected = state.remaining_pool[0].clone();
        let (det, clu) = oracles(&corpus, &state.classes);
        let before = state.classes.len();
        let (state, report) = run_iteration(state, &data, &config, &det, &clu).unwrap();
        assert_eq!(state.classes.len(), before + 1);
        assert_eq!(report.promoted.len(), 1);
        assert_eq!(report.promoted[0].majority, injected);
        assert_eq!(report.promoted[0].label, "novel-1-1");
        assert_eq!(report.unknown_detection_rate, 1.0);
        assert_eq!(report.known_false_alarm_rate, 0.0);
        assert_eq!(report.ica, Some(1.0));
        assert_eq!(report.v_measure, Some(1.0));
        assert!(!state.remaining_pool.contains(&injected));
        // the pool author's name never reaches training
        assert!(state.train.iter().all(|(_, l)| *l != injected));
        assert!(state.train.iter().all(|(_, l)| state.classes.contains(l)));
    }

    #[test]
    fn oversized_m_min_promotes_nothing() {
        let corpus = small_corpus(10, 2);
        let config = LoopConfig {
            k_unknown: 3,
            k_new: 3,
            m_min: 1000,
            ..quick_config()
        };
        let data = PreparedCorpus::new(&corpus, &config.vectorizer).unwrap();
        let state = LearningState::initial(&corpus, &config).unwrap();
        let (det, clu) = oracles(&corpus, &state.classes);
        let (after, report) = run_iteration(state.clone(), &data, &config, &det, &clu).unwrap();
        assert!(!report.discovered());
        assert_eq!(after.classes, state.classes);
        assert_eq!(after.train, state.train);
        assert_eq!(report.pre_macro_f1, report.post_macro_f1);
        assert_eq!(after.remaining_pool.len(), state.remaining_pool.len() - 3);
    }

    #[test]
    fn epsilon_os_decomposes() {
        let corpus = small_corpus(7, 3);
        let config = quick_config();
        let data = PreparedCorpus::new(&corpus, &config.vectorizer).unwrap();
        let state = LearningState::initial(&corpus, &config).unwrap();
        let (det, clu) = oracles(&corpus, &state.classes);
        let (_, report) = run_iteration(state, &data, &config, &det, &clu).unwrap();
        let e = report.epsilon_os;
        assert_eq!(e.total, e.closed + e.unknown_miss);
        assert_eq!(e.unknown_miss, 0.0);
        assert_eq!(e.n_known + e.n_unknown, report.n_test);
    }

    #[test]
    fn class_count_tracks_promotions() {
        let corpus = small_corpus(9, 4);
        let config = LoopConfig {
            n_max: 4,
            delta: 0.0,
            ..quick_config()
        };
        let data = PreparedCorpus::new(&corpus, &config.vectorizer).unwrap();
        let seeds = LearningState::initial(&corpus, &config).unwrap().classes;
        let truth: HashMap<String, String> = corpus
            .documents()
            .iter()
            .map(|d| (d.id.clone(), d.label.clone()))
            .collect();
        // every non-seed author counts as unknown, so later rounds still see
        // earlier promotions' leftovers as outliers
        let det = OracleDetector {
            truth: truth.clone(),
            known: seeds.iter().cloned().collect(),
        };
        let clu = OracleClusterer { truth };
        let out = run_with(&data, &config, &det, &clu).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert_eq!(out.stop, StopReason::MaxIterations);
        let mut expected = config.k_seed;
        for r in &out.reports {
            expected += r.promoted.len();
            assert_eq!(r.n_classes, expected);
        }
        assert_eq!(out.state.classes.len(), expected);
        assert!(out
            .state
            .train
            .iter()
            .all(|(_, l)| seeds.contains(l) || l.starts_with(NOVEL_PREFIX)));
    }

    #[test]
    fn loop_bounds() {
        let corpus = small_corpus(7, 5);
        let one = LoopConfig {
            n_max: 1,
            delta: 0.0,
            ..quick_config()
        };
        assert_eq!(run(&corpus, &one).unwrap().reports.len(), 1);

        let strict = LoopConfig {
            n_max: 3,
            delta: 1.0,
            ..quick_config()
        };
        // with nothing flagged, unknown test documents stay misclassified
        let data = PreparedCorpus::new(&corpus, &strict.vectorizer).unwrap();
        let out = run_with(&data, &strict, &FlagNothing, &strict.cluster_params()).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].post_macro_f1 < 1.0);
        assert_eq!(out.stop, StopReason::BelowDelta);

        let exhaust = LoopConfig {
            n_max: 10,
            delta: 0.0,
            ..quick_config()
        };
        let out = run(&corpus, &exhaust).unwrap();
        assert_eq!(out.reports.len(), 3);
        assert_eq!(out.stop, StopReason::PoolExhausted);
    }

    #[test]
    fn run_is_deterministic() {
        let corpus = small_corpus(7, 6);
        let config = LoopConfig {
            n_max: 2,
            delta: 0.0,
            ..quick_config()
        };
        let a = run(&corpus, &config).unwrap();
        let b = run(&corpus, &config).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = small_corpus(7, 7);
        let config = quick_config();
        let data = PreparedCorpus::new(&corpus, &config.vectorizer).unwrap();
        let state = LearningState::initial(&corpus, &config).unwrap();
        let (state, _) = run_iteration(
            state,
            &data,
            &config,
            &config.ensemble,
            &config.cluster_params(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        state.save(dir.path()).unwrap();
        let loaded = LearningState::load(dir.path()).unwrap();
        assert_eq!(loaded.model, state.model);
        assert_eq!(loaded.train, state.train);
        assert_eq!(loaded.label_map, state.label_map);
        assert_eq!(loaded.history.len(), 1);
    }

    #[test]
    fn reserved_prefix_rejected() {
        let docs = (0..8)
            .map(|i| {
                crate::corpus::Document::new(
                    format!("d{i}"),
                    "w1 w2",
                    if i < 4 { "novel-x" } else { "b" },
                )
            })
            .chain((0..8).map(|i| {
                crate::corpus::Document::new(format!("e{i}"), "w3", format!("c{}", i % 4))
            }))
            .collect();
        let corpus = LabeledCorpus::new(docs).unwrap();
        assert!(LearningState::initial(&corpus, &quick_config()).is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            LoopConfig {
                k_new: 2,
                k_unknown: 1,
                ..quick_config()
            },
            LoopConfig {
                n_max: 0,
                ..quick_config()
            },
            LoopConfig {
                delta: 1.5,
                ..quick_config()
            },
            LoopConfig {
                vectorizer: VectorizerSpec::default(),
                ..quick_config()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
