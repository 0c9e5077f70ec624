//! Single-hidden-layer softmax classifier with an exposed penultimate layer.
//!
//! `input -> dense(p, tanh) -> dense(classes) -> softmax`, trained by seeded
//! mini-batch SGD on mean cross-entropy plus `l2/2 * ||W||²` (weights only,
//! biases are not penalized). The tanh activations are the feature space the
//! novelty detectors and clusterers work in.
//!
//! Training is single-threaded and performs no fused multiply-adds, so a
//! fixed seed and data set reproduce the weights bit-for-bit on a given
//! platform.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub penultimate_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 2048,
            penultimate_dim: 64,
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 32,
            l2_penalty: 1e-4,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param(
                "input_dim, epochs and batch_size must be positive",
            ));
        }
        if self.penultimate_dim < 2 {
            return Err(Error::param("penultimate_dim must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::param("l2_penalty must be non-negative"));
        }
        Ok(())
    }
}

/// Network parameters.
///
/// `w_in` is stored input-major (`input_dim x hidden`) so that sparse inputs
/// touch contiguous rows; `w_out` is `classes x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// Gradients laid out exactly like [`Network`]'s parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Network {
    /// Xavier-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut xavier = |fan_in: usize, fan_out: usize, len: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..len)
                .map(|_| rng.random_range(-limit..limit))
                .collect::<Vec<_>>()
        };
        let w_in = xavier(input_dim, hidden, input_dim * hidden);
        let w_out = xavier(hidden, classes, classes * hidden);
        Self {
            input_dim,
            hidden,
            classes,
            w_in,
            b_hidden: vec![0.0; hidden],
            w_out,
            b_out: vec![0.0; classes],
        }
    }

    pub fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b_hidden.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let row = &self.w_in[j * self.hidden..(j + 1) * self.hidden];
            for (zi, &w) in z.iter_mut().zip(row) {
                *zi += w * xj;
            }
        }
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }

    pub fn logits_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.w_out[c * self.hidden..(c + 1) * self.hidden];
                self.b_out[c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn weight_sq_norm(&self) -> f64 {
        self.w_in.iter().chain(&self.w_out).map(|w| w * w).sum()
    }

    /// Mean cross-entropy over the batch plus the L2 term.
    pub fn loss(&self, xs: &[&[f64]], ys: &[usize], l2: f64) -> f64 {
        let ce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let logits = self.logits_from_hidden(&self.hidden_activations(x));
                log_sum_exp(&logits) - logits[y]
            })
            .sum();
        ce / xs.len() as f64 + 0.5 * l2 * self.weight_sq_norm()
    }

    /// Analytic gradient of [`Network::loss`] by backpropagation.
    pub fn gradient(&self, xs: &[&[f64]], ys: &[usize], l2: f64) -> Gradients {
        let mut g = Gradients {
            w_in: self.w_in.iter().map(|w| l2 * w).collect(),
            b_hidden: vec![0.0; self.hidden],
            w_out: self.w_out.iter().map(|w| l2 * w).collect(),
            b_out: vec![0.0; self.classes],
        };
        let inv_n = 1.0 / xs.len() as f64;
        let mut d_hidden = vec![0.0; self.hidden];
        for (x, &y) in xs.iter().zip(ys) {
            let h = self.hidden_activations(x);
            let mut d_logits = softmax(&self.logits_from_hidden(&h));
            d_logits[y] -= 1.0;
            d_logits.iter_mut().for_each(|v| *v *= inv_n);

            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for (c, &dl) in d_logits.iter().enumerate() {
                g.b_out[c] += dl;
                let row = c * self.hidden..(c + 1) * self.hidden;
                for ((gw, &w), (&hv, dh)) in g.w_out[row.clone()]
                    .iter_mut()
                    .zip(&self.w_out[row])
                    .zip(h.iter().zip(d_hidden.iter_mut()))
                {
                    *gw += dl * hv;
                    *dh += dl * w;
                }
            }
            for ((dh, &hv), gb) in d_hidden.iter_mut().zip(&h).zip(g.b_hidden.iter_mut()) {
                *dh *= 1.0 - hv * hv;
                *gb += *dh;
            }
            for (j, &xj) in x.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                let row = &mut g.w_in[j * self.hidden..(j + 1) * self.hidden];
                for (gw, &dh) in row.iter_mut().zip(&d_hidden) {
                    *gw += xj * dh;
                }
            }
        }
        g
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        step(&mut self.w_in, &g.w_in);
        step(&mut self.b_hidden, &g.b_hidden);
        step(&mut self.w_out, &g.w_out);
        step(&mut self.b_out, &g.b_out);
    }

    fn is_finite(&self) -> bool {
        self.w_in
            .iter()
            .chain(&self.b_hidden)
            .chain(&self.w_out)
            .chain(&self.b_out)
            .all(|v| v.is_finite())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub format_version: u32,
    pub network: Network,
    pub class_labels: Vec<String>,
    pub training_loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub index: usize,
    pub probabilities: Vec<f64>,
}

/// Trains from scratch. Class order is the sorted set of labels.
pub fn train(
    samples: &[(FeatureVector, String)],
    config: &NetworkConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    let class_labels: Vec<String> = samples
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_labels.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 distinct labels, found {}",
            class_labels.len()
        )));
    }
    for (fv, _) in samples {
        if fv.dim() != config.input_dim {
            return Err(Error::Shape {
                expected: config.input_dim,
                actual: fv.dim(),
            });
        }
    }
    let xs: Vec<&[f64]> = samples.iter().map(|(fv, _)| fv.values.as_slice()).collect();
    let ys: Vec<usize> = samples
        .iter()
        .map(|(_, l)| {
            class_labels
                .binary_search(l)
                .expect("label collected above")
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::init(
        config.input_dim,
        config.penultimate_dim,
        class_labels.len(),
        &mut rng,
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_x = Vec::with_capacity(config.batch_size);
    let mut batch_y = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| xs[i]));
            batch_y.extend(chunk.iter().map(|&i| ys[i]));
            let g = network.gradient(&batch_x, &batch_y, config.l2_penalty);
            network.apply(&g, config.learning_rate);
        }
        if !network.is_finite() {
            return Err(Error::Training(
                "weights diverged to non-finite values".into(),
            ));
        }
        history.push(network.loss(&xs, &ys, config.l2_penalty));
    }
    Ok(TrainedClassifier {
        format_version: CHECKPOINT_VERSION,
        network,
        class_labels,
        training_loss_history: history,
    })
}

impl TrainedClassifier {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim
    }

    pub fn penultimate_dim(&self) -> usize {
        self.network.hidden
    }

    fn check_dim(&self, fv: &FeatureVector) -> Result<()> {
        if fv.dim() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: fv.dim(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction> {
        self.check_dim(fv)?;
        let h = self.network.hidden_activations(&fv.values);
        Ok(self.predict_from_hidden(&h))
    }

    pub(crate) fn predict_from_hidden(&self, h: &[f64]) -> Prediction {
        let probabilities = softmax(&self.network.logits_from_hidden(h));
        let index = argmax(&probabilities);
        Prediction {
            label: self.class_labels[index].clone(),
            index,
            probabilities,
        }
    }

    /// Hidden-layer (tanh) activations.
    pub fn penultimate(&self, fv: &FeatureVector) -> Result<FeatureVector> {
        self.check_dim(fv)?;
        Ok(FeatureVector {
            values: self.network.hidden_activations(&fv.values),
            source_id: fv.source_id.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let model: Self = serde_json::from_reader(file)?;
        if model.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                model.format_version
            )));
        }
        let n = &model.network;
        if n.w_in.len() != n.input_dim * n.hidden
            || n.w_out.len() != n.classes * n.hidden
            || n.b_hidden.len() != n.hidden
            || n.b_out.len() != n.classes
            || model.class_labels.len() != n.classes
        {
            return Err(Error::Format("checkpoint shapes are inconsistent".into()));
        }
        Ok(model)
    }
}
