//! Labeled text corpora: loading, synthetic generation, and the known/unknown
//! class split that drives every open-set round.
//!
//! Two on-disk layouts are supported:
//!
//! * CSV with the header `id,label,text` (RFC-4180 quoting, UTF-8);
//! * one directory per author, each holding `<doc>.txt` files.
//!
//! All randomness flows from explicit 64-bit seeds through ChaCha8, so every
//! function here is a pure function of its arguments.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Documents plus the sorted set of labels they carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    documents: Vec<Document>,
    classes: Vec<String>,
}

impl LabeledCorpus {
    /// Validates ids and labels; `classes` is derived from the documents.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::Format("corpus contains no documents".into()));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        let mut classes = BTreeSet::new();
        for doc in &documents {
            if doc.label.is_empty() {
                return Err(Error::Format(format!(
                    "document {:?} has an empty label",
                    doc.id
                )));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Format(format!("duplicate document id {:?}", doc.id)));
            }
            classes.insert(doc.label.clone());
        }
        Ok(Self {
            documents,
            classes: classes.into_iter().collect(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Documents carrying `label`, in corpus order.
    pub fn documents_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Document> + 'a {
        self.documents.iter().filter(move |d| d.label == label)
    }

    /// Writes the corpus as `id,label,text` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["id", "label", "text"])?;
        for doc in &self.documents {
            writer.write_record([&doc.id, &doc.label, &doc.text])?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    DirectoryPerAuthor,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledCorpus> {
    if !path.exists() {
        return Err(Error::Load {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        });
    }
    match format {
        CorpusFormat::Csv => load_csv(path),
        CorpusFormat::DirectoryPerAuthor => load_directory(path),
    }
}

fn load_csv(path: &Path) -> Result<LabeledCorpus> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    if headers.len() != 3 || &headers[0] != "id" || &headers[1] != "label" || &headers[2] != "text"
    {
        return Err(Error::Format(format!(
            "expected header `id,label,text`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut documents = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", row + 2)))?;
        if record.len() != 3 {
            return Err(Error::Format(format!("row {}: expected 3 fields", row + 2)));
        }
        documents.push(Document::new(&record[0], &record[2], &record[1]));
    }
    LabeledCorpus::new(documents)
}

fn load_directory(root: &Path) -> Result<LabeledCorpus> {
    let io_err = |source| Error::Load {
        path: root.to_path_buf(),
        source,
    };
    let mut authors: Vec<_> = fs::read_dir(root)
        .map_err(io_err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    authors.sort_by_key(|e| e.file_name());

    let mut documents = Vec::new();
    for author in authors {
        let label = author.file_name().to_string_lossy().into_owned();
        let mut files: Vec<_> = fs::read_dir(author.path())
            .map_err(io_err)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let path = file.path();
            let text = fs::read_to_string(&path).map_err(|source| Error::Load {
                path: path.clone(),
                source,
            })?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            documents.push(Document::new(
                format!("{label}/{stem}"),
                text,
                label.clone(),
            ));
        }
    }
    LabeledCorpus::new(documents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub num_authors: usize,
    pub docs_per_author: usize,
    pub doc_len: usize,
    pub vocab_size: usize,
    /// Mixing weight in (0, 1] between the shared Zipf unigram distribution
    /// and each author's Dirichlet draw.
    pub style_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            num_authors: 50,
            docs_per_author: 60,
            doc_len: 200,
            vocab_size: 5000,
            style_skew: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_authors", self.num_authors),
            ("docs_per_author", self.docs_per_author),
            ("doc_len", self.doc_len),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        if !(self.style_skew > 0.0 && self.style_skew <= 1.0) {
            return Err(Error::param(format!(
                "style_skew must lie in (0, 1], got {}",
                self.style_skew
            )));
        }
        Ok(())
    }
}

/// Dirichlet concentration of each author's word distribution around the
/// shared Zipf base.
pub const STYLE_CONCENTRATION: f64 = 50.0;

/// Generates a corpus in which each author draws tokens from
/// `(1 - skew) * zipf + skew * dirichlet(STYLE_CONCENTRATION * zipf)`.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<LabeledCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let vocab = params.vocab_size;
    let harmonic: f64 = (1..=vocab).map(|r| 1.0 / r as f64).sum();
    let base: Vec<f64> = (1..=vocab).map(|r| 1.0 / (r as f64 * harmonic)).collect();
    let words: Vec<String> = (0..vocab).map(|w| format!("w{w}")).collect();

    let author_width = digits(params.num_authors);
    let doc_width = digits(params.docs_per_author);
    let skew = params.style_skew;
    let mut documents = Vec::with_capacity(params.num_authors * params.docs_per_author);
    for a in 0..params.num_authors {
        let mut style: Vec<f64> = base
            .iter()
            .map(|&p| {
                let alpha = (p * STYLE_CONCENTRATION).max(1e-3);
                Gamma::new(alpha, 1.0)
                    .expect("positive shape")
                    .sample(&mut rng)
            })
            .collect();
        let total: f64 = style.iter().sum();
        for (s, &p) in style.iter_mut().zip(&base) {
            *s = (1.0 - skew) * p + skew * (*s / total);
        }
        let sampler = WeightedIndex::new(&style).map_err(|e| Error::Numeric(e.to_string()))?;
        let label = format!("author{a:0author_width$}");
        for d in 0..params.docs_per_author {
            let mut text = String::with_capacity(params.doc_len * 6);
            for t in 0..params.doc_len {
                if t > 0 {
                    text.push(' ');
                }
                text.push_str(&words[sampler.sample(&mut rng)]);
            }
            documents.push(Document::new(
                format!("{label}-d{d:0doc_width$}"),
                text,
                label.clone(),
            ));
        }
    }
    LabeledCorpus::new(documents)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k_seed: usize,
    pub k_unknown: usize,
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(k_seed: usize, k_unknown: usize) -> Self {
        Self {
            k_seed,
            k_unknown,
            train_fraction: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_seed < 2 {
            return Err(Error::param("k_seed must be at least 2"));
        }
        if self.k_unknown < 1 {
            return Err(Error::param("k_unknown must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param(
                "train_fraction must lie strictly between 0 and 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPartition {
    pub known: Vec<String>,
    /// The classes injected into this round's test set.
    pub unknown_pool: Vec<String>,
    /// Every non-known class in seeded draw order; `unknown_pool` is its prefix.
    pub remaining: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub partition: ClassPartition,
}

/// Seeded known/unknown split.
///
/// Known classes give `train_fraction` of their documents to `train` and the
/// rest to `test`; each selected unknown class contributes all documents to
/// `test`.
pub fn make_partition(corpus: &LabeledCorpus, spec: &SplitSpec, seed: u64) -> Result<Split> {
    spec.validate()?;
    let needed = spec.k_seed + spec.k_unknown;
    if corpus.classes().len() < needed {
        return Err(Error::Partition(format!(
            "corpus has {} classes but k_seed + k_unknown = {needed}",
            corpus.classes().len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = corpus.classes().to_vec();
    order.shuffle(&mut rng);
    let remaining = order.split_off(spec.k_seed);
    let known = order;
    let unknown_pool = remaining[..spec.k_unknown].to_vec();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in &known {
        let mut docs: Vec<&Document> = corpus.documents_of(label).collect();
        docs.shuffle(&mut rng);
        let n_train = split_point(docs.len(), spec.train_fraction);
        train.extend(docs[..n_train].iter().map(|d| (*d).clone()));
        test.extend(docs[n_train..].iter().map(|d| (*d).clone()));
    }
    for label in &unknown_pool {
        test.extend(corpus.documents_of(label).cloned());
    }
    Ok(Split {
        train,
        test,
        partition: ClassPartition {
            known,
            unknown_pool,
            remaining,
            seed,
        },
    })
}

/// Number of documents kept for training; at least one on each side when n ≥ 2.
pub(crate) fn split_point(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_four_rows_two_authors() {
        let f = write_tmp("id,label,text\n1,A,hello there\n2,B,\"quoted, text\"\n3,A,x\n4,B,y\n");
        let corpus = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(corpus.classes(), ["A", "B"]);
        assert_eq!(corpus.documents()[1].text, "quoted, text");
    }

    #[test]
    fn csv_empty_label_rejected() {
        let f = write_tmp("id,label,text\n1,,hello\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_duplicate_id_rejected() {
        let f = write_tmp("id,label,text\n1,A,a\n1,B,b\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_empty_corpus_rejected() {
        let f = write_tmp("id,label,text\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_wrong_header_rejected() {
        let f = write_tmp("label,id,text\nA,1,a\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Csv),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_path_is_load_error() {
        let err = load_corpus(Path::new("/nonexistent/corpus.csv"), CorpusFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn directory_layout_fifty_by_fifty() {
        let dir = tempfile::tempdir().unwrap();
        for a in 0..50 {
            let author = dir.path().join(format!("author{a:02}"));
            fs::create_dir(&author).unwrap();
            for d in 0..50 {
                fs::write(author.join(format!("{d:02}.txt")), format!("text {a} {d}")).unwrap();
            }
        }
        let corpus = load_corpus(dir.path(), CorpusFormat::DirectoryPerAuthor).unwrap();
        assert_eq!(corpus.len(), 2500);
        assert_eq!(corpus.classes().len(), 50);
        assert_eq!(corpus.documents()[0].id, "author00/00");
        assert_eq!(corpus.documents()[51].text, "text 1 1");
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let corpus = generate_synthetic(&SyntheticParams {
            num_authors: 3,
            docs_per_author: 4,
            doc_len: 10,
            vocab_size: 50,
            style_skew: 0.5,
            seed: 1,
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        corpus.write_csv(f.path()).unwrap();
        let back = load_corpus(f.path(), CorpusFormat::Csv).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let params = SyntheticParams {
            num_authors: 50,
            docs_per_author: 100,
            doc_len: 200,
            vocab_size: 5000,
            style_skew: 0.5,
            seed: 7,
        };
        let a = generate_synthetic(&params).unwrap();
        let b = generate_synthetic(&params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5000);
        assert_eq!(a.classes().len(), 50);
        let other = generate_synthetic(&SyntheticParams { seed: 8, ..params }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn synthetic_rejects_zero_counts_and_bad_skew() {
        let ok = SyntheticParams::default();
        assert!(generate_synthetic(&SyntheticParams {
            num_authors: 0,
            ..ok.clone()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticParams {
            style_skew: 0.0,
            ..ok.clone()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticParams {
            style_skew: 1.5,
            ..ok
        })
        .is_err());
    }

    fn fifty_class_corpus() -> LabeledCorpus {
        generate_synthetic(&SyntheticParams {
            num_authors: 50,
            docs_per_author: 10,
            doc_len: 5,
            vocab_size: 100,
            style_skew: 0.5,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn partition_five_known_three_unknown() {
        let corpus = fifty_class_corpus();
        let split = make_partition(&corpus, &SplitSpec::new(5, 3), 11).unwrap();
        let train_labels: BTreeSet<_> = split.train.iter().map(|d| d.label.as_str()).collect();
        let test_labels: BTreeSet<_> = split.test.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(train_labels.len(), 5);
        assert_eq!(test_labels.len(), 8);
        assert_eq!(split.partition.remaining.len(), 45);
        // 7 of 10 train, 3 held out, plus 10 per unknown class
        assert_eq!(split.train.len(), 35);
        assert_eq!(split.test.len(), 15 + 30);
        for d in &split.test {
            if split.partition.unknown_pool.contains(&d.label) {
                continue;
            }
            assert!(split.partition.known.contains(&d.label));
        }
    }

    #[test]
    fn partition_needs_enough_classes() {
        let corpus = fifty_class_corpus();
        let err = make_partition(&corpus, &SplitSpec::new(50, 1), 1).unwrap_err();
        assert!(matches!(err, Error::Partition(_)));
    }

    #[test]
    fn partition_is_deterministic() {
        let corpus = fifty_class_corpus();
        let spec = SplitSpec::new(4, 2);
        assert_eq!(
            make_partition(&corpus, &spec, 5).unwrap(),
            make_partition(&corpus, &spec, 5).unwrap()
        );
    }

    proptest::proptest! {
        #[test]
        fn partition_invariants(seed in 0u64..1000, k_seed in 2usize..10, k_unknown in 1usize..5) {
            let corpus = fifty_class_corpus();
            let split = make_partition(&corpus, &SplitSpec::new(k_seed, k_unknown), seed).unwrap();
            let p = &split.partition;
            proptest::prop_assert!(p.known.iter().all(|k| !p.unknown_pool.contains(k)));
            proptest::prop_assert!(split.train.iter().all(|d| p.known.contains(&d.label)));
            let train_ids: HashSet<_> = split.train.iter().map(|d| &d.id).collect();
            proptest::prop_assert!(split.test.iter().all(|d| !train_ids.contains(&d.id)));
            let expected: BTreeSet<_> = p.known.iter().chain(&p.unknown_pool).collect();
            let got: BTreeSet<_> = split.test.iter().map(|d| &d.label).collect();
            proptest::prop_assert_eq!(expected, got);
        }
    }
}
