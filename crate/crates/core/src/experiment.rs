//! Sweep harness: runs the incremental loop over a grid of
//! (k_seed, k_new, clustering algorithm, seed) cells and writes CSV reports.
//!
//! Output layout under the configured directory:
//!
//! - `iterations.csv`: one row per iteration of every cell
//! - `table1.csv`: first-round pre-exposure and final post-retrain scores
//! - `table2.csv`: Davies-Bouldin and V-measure per cell, averaged over rounds
//! - `table3.csv`: ICA per cell, averaged over rounds
//! - `cells/<cell>/iterations.csv`: the cell's own rows, written as it finishes
//! - `cells/<cell>/clusters_<iter>.csv`: 2-D PCA of each round's outliers
//! - `cells/<cell>/checkpoint/`: learning state after the latest round

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::clustering::{l2_normalize_rows, Algorithm, Bandwidth};
use crate::corpus::{
    generate_synthetic, load_corpus, CorpusFormat, LabeledCorpus, SyntheticParams,
};
use crate::error::{Error, Result};
use crate::incremental::{
    run_from, IterationReport, LearningState, LoopConfig, PreparedCorpus, StopReason,
};

pub const ITERATIONS_HEADER: [&str; 25] = [
    "k_seed",
    "k_new",
    "k_unknown",
    "algorithm",
    "seed",
    "iteration",
    "injected",
    "n_train",
    "n_test",
    "n_outliers",
    "unknown_detection_rate",
    "known_false_alarm_rate",
    "pre_accuracy",
    "pre_macro_f1",
    "post_accuracy",
    "post_macro_f1",
    "epsilon_os",
    "closed_error",
    "unknown_miss_rate",
    "n_clusters",
    "davies_bouldin",
    "v_measure",
    "ica",
    "promoted",
    "n_classes",
];
pub const TABLE1_HEADER: [&str; 9] = [
    "k_seed",
    "k_new",
    "algorithm",
    "seed",
    "iterations",
    "pre_accuracy",
    "pre_macro_f1",
    "post_accuracy",
    "post_macro_f1",
];
pub const TABLE2_HEADER: [&str; 6] = [
    "k_seed",
    "k_new",
    "algorithm",
    "seed",
    "davies_bouldin",
    "v_measure",
];
pub const TABLE3_HEADER: [&str; 5] = ["k_seed", "k_new", "algorithm", "seed", "ica"];
pub const CLUSTERS_HEADER: [&str; 5] = ["sample_id", "pc1", "pc2", "cluster", "truth_label"];

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "OPENSETIQ_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic(SyntheticParams),
    File { path: PathBuf, format: CorpusFormat },
}

impl CorpusSource {
    pub fn load(&self) -> Result<LabeledCorpus> {
        match self {
            CorpusSource::Synthetic(params) => generate_synthetic(params),
            CorpusSource::File { path, format } => load_corpus(path, *format),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    /// Loop settings shared by every cell; sweep axes override `k_seed`,
    /// `k_new`, `k_unknown`, the clustering algorithm and the seeds.
    pub base: LoopConfig,
    /// Unknown classes injected per round; `None` uses each cell's `k_new`.
    pub k_unknown: Option<usize>,
    pub k_seeds: Vec<usize>,
    pub k_news: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::Synthetic(SyntheticParams::default()),
            base: LoopConfig::default(),
            k_unknown: None,
            k_seeds: vec![5, 10, 15, 20],
            k_news: vec![1, 2, 3],
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("results"),
        }
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub k_seed: usize,
    pub k_new: usize,
    pub k_unknown: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!(
            "kseed{}_knew{}_kunk{}_{}_seed{}",
            self.k_seed, self.k_new, self.k_unknown, self.algorithm, self.seed
        )
    }

    pub fn loop_config(&self, base: &LoopConfig) -> LoopConfig {
        let mut config = base.clone();
        config.k_seed = self.k_seed;
        config.k_new = self.k_new;
        config.k_unknown = self.k_unknown;
        config.seed = self.seed;
        config.clustering.algorithm = self.algorithm;
        config.clustering.seed = self.seed;
        config.ensemble.seed = self.seed;
        config.network.input_dim = config.vectorizer.dim;
        config
    }
}

/// Line numbers of the keys read from a config file, for diagnostics.
type KeyLines = BTreeMap<String, usize>;

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| cfg_err(line, format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s, line))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(cfg_err(line, format!("{key}: list must not be empty")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(
            line,
            format!("{key}: expected true or false, got {value:?}"),
        )),
    }
}

impl ExperimentConfig {
    /// Parses flat `key = value` text. `#` starts a comment; relative paths
    /// are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config = Self::default();
        let mut synthetic = SyntheticParams::default();
        let mut use_synthetic = true;
        let mut corpus_path: Option<(PathBuf, usize)> = None;
        let mut corpus_format = CorpusFormat::Csv;
        let mut lines = KeyLines::new();
        let mut seen = HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected key = value, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(cfg_err(line, format!("duplicate key {key}")));
            }
            lines.insert(key.to_owned(), line);
            let b = &mut config.base;
            match key {
                "output" => config.output = base_dir.join(value),
                "corpus.path" => {
                    corpus_path = Some((base_dir.join(value), line));
                    use_synthetic = false;
                }
                "corpus.format" => {
                    corpus_format = match value {
                        "csv" => CorpusFormat::Csv,
                        "directory" => CorpusFormat::DirectoryPerAuthor,
                        _ => {
                            return Err(cfg_err(
                                line,
                                format!("corpus.format: expected csv or directory, got {value:?}"),
                            ))
                        }
                    }
                }
                "synthetic.authors" => synthetic.num_authors = parse_value(key, value, line)?,
                "synthetic.docs" => synthetic.docs_per_author = parse_value(key, value, line)?,
                "synthetic.doc_len" => synthetic.doc_len = parse_value(key, value, line)?,
                "synthetic.vocab" => synthetic.vocab_size = parse_value(key, value, line)?,
                "synthetic.skew" => synthetic.style_skew = parse_value(key, value, line)?,
                "synthetic.seed" => synthetic.seed = parse_value(key, value, line)?,
                "sweep.k_seed" => config.k_seeds = parse_list(key, value, line)?,
                "sweep.k_new" => config.k_news = parse_list(key, value, line)?,
                "sweep.algorithm" => config.algorithms = parse_list(key, value, line)?,
                "seeds" => config.seeds = parse_list(key, value, line)?,
                "k_unknown" => config.k_unknown = Some(parse_value(key, value, line)?),
                "n_max" => b.n_max = parse_value(key, value, line)?,
                "delta" => b.delta = parse_value(key, value, line)?,
                "m_min" => b.m_min = parse_value(key, value, line)?,
                "train_fraction" => b.train_fraction = parse_value(key, value, line)?,
                "blind" => b.blind = parse_bool(key, value, line)?,
                "vectorizer.dim" => b.vectorizer.dim = parse_value(key, value, line)?,
                "vectorizer.ngrams" => b.vectorizer.ngram_orders = parse_list(key, value, line)?,
                "vectorizer.hash_seed" => b.vectorizer.hash_seed = parse_value(key, value, line)?,
                "vectorizer.lowercase" => b.vectorizer.lowercase = parse_bool(key, value, line)?,
                "network.penultimate_dim" => {
                    b.network.penultimate_dim = parse_value(key, value, line)?
                }
                "network.learning_rate" => b.network.learning_rate = parse_value(key, value, line)?,
                "network.epochs" => b.network.epochs = parse_value(key, value, line)?,
                "network.batch_size" => b.network.batch_size = parse_value(key, value, line)?,
                "network.l2_penalty" => b.network.l2_penalty = parse_value(key, value, line)?,
                "network.seed" => b.network.seed = parse_value(key, value, line)?,
                "ensemble.lof_k" => b.ensemble.lof_k = parse_value(key, value, line)?,
                "ensemble.lof_threshold" => {
                    b.ensemble.lof_threshold = parse_value(key, value, line)?
                }
                "ensemble.iforest_trees" => {
                    b.ensemble.iforest_trees = parse_value(key, value, line)?
                }
                "ensemble.iforest_subsample" => {
                    b.ensemble.iforest_subsample = parse_value(key, value, line)?
                }
                "ensemble.weibull_tail" => b.ensemble.weibull_tail = parse_value(key, value, line)?,
                "ensemble.calibration_quantile" => {
                    b.ensemble.calibration_quantile = parse_value(key, value, line)?
                }
                "clustering.k" => b.clustering.k = Some(parse_value(key, value, line)?),
                "clustering.eps" => b.clustering.eps = parse_value(key, value, line)?,
                "clustering.min_pts" => b.clustering.min_pts = parse_value(key, value, line)?,
                "clustering.birch_threshold" => {
                    b.clustering.birch_threshold = parse_value(key, value, line)?
                }
                "clustering.branching" => b.clustering.branching = parse_value(key, value, line)?,
                "clustering.bandwidth" => {
                    b.clustering.bandwidth = if value == "median" {
                        Bandwidth::MedianHeuristic
                    } else {
                        Bandwidth::Fixed(parse_value(key, value, line)?)
                    }
                }
                _ => return Err(cfg_err(line, format!("unknown key {key}"))),
            }
        }
        config.base.network.input_dim = config.base.vectorizer.dim;
        config.corpus = match corpus_path {
            Some((path, _)) if !use_synthetic => CorpusSource::File {
                path,
                format: corpus_format,
            },
            _ => CorpusSource::Synthetic(synthetic),
        };
        config.validate_with(&lines)?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&KeyLines::new())
    }

    /// Checks every cell's loop config; errors point at the line of the
    /// offending key when it came from a file, or line 0 otherwise.
    fn validate_with(&self, lines: &KeyLines) -> Result<()> {
        let at = |key: &str| lines.get(key).copied().unwrap_or(0);
        if let CorpusSource::Synthetic(params) = &self.corpus {
            params.validate().map_err(|e| {
                cfg_err(
                    at("synthetic.authors").max(at("synthetic.skew")),
                    e.to_string(),
                )
            })?;
        }
        for cell in self.cells() {
            cell.loop_config(&self.base).validate().map_err(|e| {
                let line = [
                    "k_unknown",
                    "sweep.k_new",
                    "sweep.k_seed",
                    "n_max",
                    "delta",
                    "train_fraction",
                    "vectorizer.dim",
                    "network.learning_rate",
                    "ensemble.calibration_quantile",
                    "clustering.k",
                ]
                .iter()
                .map(|k| at(k))
                .find(|&l| l > 0)
                .unwrap_or(0);
                cfg_err(line, format!("cell {}: {e}", cell.name()))
            })?;
        }
        Ok(())
    }

    /// Sweep grid in (k_seed, k_new, algorithm, seed) order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &k_seed in &self.k_seeds {
            for &k_new in &self.k_news {
                for &algorithm in &self.algorithms {
                    for &seed in &self.seeds {
                        cells.push(Cell {
                            k_seed,
                            k_new,
                            k_unknown: self.k_unknown.unwrap_or(k_new),
                            algorithm,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub reports: Vec<IterationReport>,
    pub stop: StopReason,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Completed cells in grid order.
    pub results: Vec<CellResult>,
    /// Cells that failed, with their error message.
    pub failures: Vec<(Cell, String)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn iteration_row(cell: &Cell, r: &IterationReport) -> Vec<String> {
    let promoted: Vec<String> = r
        .promoted
        .iter()
        .map(|p| format!("{}:{}:{}", p.label, p.majority, p.size))
        .collect();
    vec![
        cell.k_seed.to_string(),
        cell.k_new.to_string(),
        cell.k_unknown.to_string(),
        cell.algorithm.to_string(),
        cell.seed.to_string(),
        r.iteration.to_string(),
        r.injected.join(";"),
        r.n_train.to_string(),
        r.n_test.to_string(),
        r.n_outliers.to_string(),
        r.unknown_detection_rate.to_string(),
        r.known_false_alarm_rate.to_string(),
        r.pre_accuracy.to_string(),
        r.pre_macro_f1.to_string(),
        r.post_accuracy.to_string(),
        r.post_macro_f1.to_string(),
        r.epsilon_os.total.to_string(),
        r.epsilon_os.closed.to_string(),
        r.epsilon_os.unknown_miss.to_string(),
        r.n_clusters.to_string(),
        fmt_opt(r.davies_bouldin),
        fmt_opt(r.v_measure),
        fmt_opt(r.ica),
        promoted.join(";"),
        r.n_classes.to_string(),
    ]
}

fn cell_key(cell: &Cell) -> [String; 4] {
    [
        cell.k_seed.to_string(),
        cell.k_new.to_string(),
        cell.algorithm.to_string(),
        cell.seed.to_string(),
    ]
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Projects rows onto their two leading principal components. Component
/// signs are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n < 2 || dim == 0 {
        return vec![[0.0, 0.0]; n];
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut out = [0.0; 2];
            for (slot, axis) in out.iter_mut().zip(&axes) {
                *slot = centered.row(i).iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect()
}

fn write_clusters(path: &Path, report: &IterationReport) -> Result<()> {
    let snap = &report.outliers;
    let projected = pca_2d(&l2_normalize_rows(&snap.features));
    let rows = (0..snap.ids.len()).map(|i| {
        vec![
            snap.ids[i].clone(),
            projected[i][0].to_string(),
            projected[i][1].to_string(),
            snap.clusters[i].to_string(),
            snap.truth[i].clone(),
        ]
    });
    write_csv(path, &CLUSTERS_HEADER, rows)
}

/// Runs one cell, writing its per-iteration files under `dir`.
pub fn run_cell(
    data: &PreparedCorpus,
    base: &LoopConfig,
    cell: &Cell,
    dir: &Path,
) -> Result<CellResult> {
    let config = cell.loop_config(base);
    fs::create_dir_all(dir)?;
    let state = LearningState::initial(data.corpus, &config)?;
    let checkpoint = dir.join("checkpoint");
    let mut rows = Vec::new();
    let outcome = run_from(
        state,
        data,
        &config,
        &config.ensemble,
        &config.cluster_params(),
        &mut |state, report| {
            write_clusters(
                &dir.join(format!("clusters_{}.csv", report.iteration)),
                report,
            )?;
            rows.push(iteration_row(cell, report));
            write_csv(
                &dir.join("iterations.csv"),
                &ITERATIONS_HEADER,
                rows.clone(),
            )?;
            state.save(&checkpoint)
        },
    )?;
    Ok(CellResult {
        cell: *cell,
        reports: outcome.reports,
        stop: outcome.stop,
    })
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::param(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs every cell and writes the aggregate reports from the cells that
/// completed. Cells run in parallel, capped by `OPENSETIQ_THREADS`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let corpus = config.corpus.load()?;
    let data = PreparedCorpus::new(&corpus, &config.base.vectorizer)?;
    fs::create_dir_all(&config.output)?;
    let cells_dir = config.output.join("cells");

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::param(e.to_string()))?;
    let results: Vec<(Cell, Result<CellResult>)> = pool.install(|| {
        config
            .cells()
            .into_par_iter()
            .map(|cell| {
                let out = run_cell(&data, &config.base, &cell, &cells_dir.join(cell.name()));
                (cell, out)
            })
            .collect()
    });

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in results {
        match result {
            Ok(r) => done.push(r),
            Err(e) => failures.push((cell, e.to_string())),
        }
    }
    write_reports(&config.output, &done)?;
    Ok(ExperimentOutcome {
        results: done,
        failures,
    })
}

/// Writes the top-level `iterations.csv` and `table{1,2,3}.csv`.
pub fn write_reports(dir: &Path, results: &[CellResult]) -> Result<()> {
    write_csv(
        &dir.join("iterations.csv"),
        &ITERATIONS_HEADER,
        results
            .iter()
            .flat_map(|r| r.reports.iter().map(move |it| iteration_row(&r.cell, it))),
    )?;
    let with_reports = || results.iter().filter(|r| !r.reports.is_empty());
    write_csv(
        &dir.join("table1.csv"),
        &TABLE1_HEADER,
        with_reports().map(|r| {
            let (first, last) = (&r.reports[0], &r.reports[r.reports.len() - 1]);
            let mut row = cell_key(&r.cell).to_vec();
            row.extend([
                r.reports.len().to_string(),
                first.pre_accuracy.to_string(),
                first.pre_macro_f1.to_string(),
                last.post_accuracy.to_string(),
                last.post_macro_f1.to_string(),
            ]);
            row
        }),
    )?;
    write_csv(
        &dir.join("table2.csv"),
        &TABLE2_HEADER,
        with_reports().map(|r| {
            let mut row = cell_key(&r.cell).to_vec();
            row.push(fmt_opt(mean_defined(
                r.reports.iter().map(|it| it.davies_bouldin),
            )));
            row.push(fmt_opt(mean_defined(
                r.reports.iter().map(|it| it.v_measure),
            )));
            row
        }),
    )?;
    write_csv(
        &dir.join("table3.csv"),
        &TABLE3_HEADER,
        with_reports().map(|r| {
            let mut row = cell_key(&r.cell).to_vec();
            row.push(fmt_opt(mean_defined(r.reports.iter().map(|it| it.ica))));
            row
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    fn config_line(err: Error) -> usize {
        match err {
            Error::Config { line, .. } => line,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn defaults_cover_full_grid() {
        let config = parse("").unwrap();
        assert_eq!(config.cells().len(), 4 * 3 * 4 * 5);
        assert_eq!(
            config.corpus,
            CorpusSource::Synthetic(SyntheticParams::default())
        );
        assert!(config.cells().iter().all(|c| c.k_unknown == c.k_new));
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# sweep\n\
                    sweep.k_seed = 5, 10\n\
                    sweep.k_new = 1\n\
                    sweep.algorithm = spectral,kmeans  # two\n\
                    seeds = 3\n\
                    k_unknown = 3\n\
                    output = out\n\
                    corpus.path = data/c.csv\n\
                    clustering.bandwidth = 0.25\n\
                    vectorizer.dim = 256\n\
                    blind = yes\n";
        let config = parse(text).unwrap();
        assert_eq!(config.k_seeds, vec![5, 10]);
        assert_eq!(
            config.algorithms,
            vec![Algorithm::Spectral, Algorithm::KMeans]
        );
        assert_eq!(config.output, PathBuf::from("/base/out"));
        assert_eq!(
            config.corpus,
            CorpusSource::File {
                path: PathBuf::from("/base/data/c.csv"),
                format: CorpusFormat::Csv
            }
        );
        assert_eq!(config.base.clustering.bandwidth, Bandwidth::Fixed(0.25));
        assert_eq!(config.base.network.input_dim, 256);
        assert!(config.base.blind);
        let cells = config.cells();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.k_unknown == 3 && c.seed == 3));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(config_line(parse("n_max = 2\nbogus = 1\n").unwrap_err()), 2);
        assert_eq!(config_line(parse("\n\nn_max = two\n").unwrap_err()), 3);
        assert_eq!(
            config_line(parse("seeds = 1\nno equals sign\n").unwrap_err()),
            2
        );
        assert_eq!(config_line(parse("seeds = 1\nseeds = 2\n").unwrap_err()), 2);
        assert_eq!(
            config_line(parse("sweep.algorithm = kmeans, optics\n").unwrap_err()),
            1
        );
        assert_eq!(config_line(parse("seeds =\n").unwrap_err()), 1);
        assert_eq!(config_line(parse("blind = maybe\n").unwrap_err()), 1);
    }

    #[test]
    fn cross_field_errors_point_at_a_key() {
        let err = parse("sweep.k_new = 3\nk_unknown = 2\n").unwrap_err();
        assert_eq!(config_line(err), 2);
        let err = parse("\ndelta = 1.5\n").unwrap_err();
        assert_eq!(config_line(err), 2);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        // every x appears with both y = 0.25 and y = -0.25, so the axes are
        // uncorrelated
        let points: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = (i / 2) as f64 - 4.5;
                let y = if i % 2 == 0 { 0.25 } else { -0.25 };
                vec![3.0 * t, y, 1.0]
            })
            .collect();
        let proj = pca_2d(&points);
        // first axis is the first coordinate, second the alternating one
        for (p, q) in proj.iter().zip(&points) {
            assert!((p[0] - q[0]).abs() < 1e-9);
            assert!((p[1].abs() - 0.25).abs() < 1e-9);
        }
        assert_eq!(pca_2d(&[vec![1.0, 2.0]]), vec![[0.0, 0.0]]);
    }
}
