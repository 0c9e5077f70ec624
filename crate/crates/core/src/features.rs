//! Signed feature hashing of token n-grams.
//!
//! Each n-gram is hashed with a seeded xxh64; the low bits (mod `dim`) pick
//! the bucket and the top bit picks the sign. Counts are accumulated and the
//! result is L2-normalized, so every vector has norm 1 except the all-zero
//! vector produced by empty text.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh64::Xxh64;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorizerSpec {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub hash_seed: u64,
    pub lowercase: bool,
}

impl Default for VectorizerSpec {
    fn default() -> Self {
        Self {
            dim: 2048,
            ngram_orders: vec![1, 2],
            hash_seed: 0,
            lowercase: true,
        }
    }
}

impl VectorizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 16 {
            return Err(Error::param(format!(
                "vectorizer dim must be >= 16, got {}",
                self.dim
            )));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::param(
                "ngram_orders must be non-empty with every order >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_id: Option<String>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            source_id: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// NFC-normalizes, optionally lowercases, and splits on Unicode whitespace.
/// Punctuation stays attached to its word.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let normalized = if lowercase {
        normalized.to_lowercase()
    } else {
        normalized
    };
    normalized.split_whitespace().map(str::to_owned).collect()
}

/// Seeded 64-bit hash of an n-gram; the order is mixed in so that a bigram
/// never shares a hash with the unigram made of its concatenation.
pub(crate) fn hash_ngram(tokens: &[String], seed: u64) -> u64 {
    let mut hasher = Xxh64::new(seed);
    hasher.update(&(tokens.len() as u32).to_le_bytes());
    for token in tokens {
        hasher.update(token.as_bytes());
        hasher.update(&[0x1f]);
    }
    hasher.digest()
}

/// Bucket index and sign for a hash value.
pub(crate) fn bucket(hash: u64, dim: usize) -> (usize, f64) {
    let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
    ((hash % dim as u64) as usize, sign)
}

pub fn vectorize(doc: &Document, spec: &VectorizerSpec) -> Result<FeatureVector> {
    spec.validate()?;
    let mut fv = vectorize_text(&doc.text, spec);
    fv.source_id = Some(doc.id.clone());
    Ok(fv)
}

pub fn vectorize_all(docs: &[Document], spec: &VectorizerSpec) -> Result<Vec<FeatureVector>> {
    use rayon::prelude::*;
    spec.validate()?;
    Ok(docs
        .par_iter()
        .map(|d| {
            let mut fv = vectorize_text(&d.text, spec);
            fv.source_id = Some(d.id.clone());
            fv
        })
        .collect())
}

fn vectorize_text(text: &str, spec: &VectorizerSpec) -> FeatureVector {
    let tokens = tokenize(text, spec.lowercase);
    let mut values = vec![0.0; spec.dim];
    for &order in &spec.ngram_orders {
        for gram in tokens.windows(order) {
            let (idx, sign) = bucket(hash_ngram(gram, spec.hash_seed), spec.dim);
            values[idx] += sign;
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector::new(values)
}
