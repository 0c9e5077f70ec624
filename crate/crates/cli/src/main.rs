use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use opensetiq::clustering::ClusterSet;
use opensetiq::corpus::{generate_synthetic, SyntheticParams};
use opensetiq::experiment::{run_experiment, ExperimentConfig};
use opensetiq::metrics::{
    classification_report, closed_error, davies_bouldin, ica_components, open_set_error, v_measure,
    GroundTruth, VMeasureParams,
};

#[derive(Parser)]
#[command(
    name = "opensetiq",
    version,
    about = "Open-set incremental class learning for authorship attribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as `id,label,text` CSV.
    Generate(GenerateArgs),
    /// Run an experiment sweep from a key = value config file.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score cluster assignments and predictions given as CSV.
    Metrics(MetricsArgs),
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    authors: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    docs: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    doc_len: u64,
    #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
    vocab: u64,
    #[arg(long, default_value_t = 0.5)]
    skew: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(clap::Args)]
struct MetricsArgs {
    /// CSV with `sample_id`, `cluster` and `truth_label` columns; any other
    /// columns are numeric features. Cluster `-1` marks noise.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// CSV with `sample_id`, `truth_label` and `prediction` columns covering
    /// the whole test round; outlier verdicts use the label `unknown`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Comma-separated labels the classifier was trained on.
    #[arg(long, value_delimiter = ',')]
    known: Vec<String>,
    /// V-measure weight.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate(&args),
        Command::Run { config, output } => run(&config, output),
        Command::Metrics(args) => metrics(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn generate(args: &GenerateArgs) -> Result<ExitCode> {
    let params = SyntheticParams {
        num_authors: args.authors as usize,
        docs_per_author: args.docs as usize,
        doc_len: args.doc_len as usize,
        vocab_size: args.vocab as usize,
        style_skew: args.skew,
        seed: args.seed,
    };
    let corpus = generate_synthetic(&params)?;
    corpus
        .write_csv(&args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn run(path: &Path, output: Option<PathBuf>) -> Result<ExitCode> {
    let mut config =
        ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(out) = output {
        config.output = out;
    }
    let outcome = run_experiment(&config)?;
    println!(
        "{} of {} cells completed; reports in {}",
        outcome.results.len(),
        outcome.results.len() + outcome.failures.len(),
        config.output.display()
    );
    for (cell, err) in &outcome.failures {
        eprintln!("cell {} failed: {err}", cell.name());
    }
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

type Rows = Vec<BTreeMap<String, String>>;

fn read_rows(path: &Path, required: &[&str]) -> Result<Rows> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    for col in required {
        if !headers.iter().any(|h| h == col) {
            bail!("{} lacks column {col}", path.display());
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(
            headers
                .iter()
                .cloned()
                .zip(record.iter().map(str::to_owned))
                .collect(),
        );
    }
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(rows)
}

fn metrics(args: &MetricsArgs) -> Result<ExitCode> {
    if args.clusters.is_none() && args.predictions.is_none() {
        bail!("give --clusters, --predictions or both");
    }
    let mut out: Vec<(String, String)> = Vec::new();
    let undefined = |name: &str, err: String| eprintln!("{name}: {err}");

    let predictions = args
        .predictions
        .as_deref()
        .map(|p| read_rows(p, &["sample_id", "truth_label", "prediction"]))
        .transpose()?;

    if let Some(rows) = &predictions {
        let truth: Vec<&str> = rows.iter().map(|r| r["truth_label"].as_str()).collect();
        let preds: Vec<&str> = rows.iter().map(|r| r["prediction"].as_str()).collect();
        let known_rows: Vec<usize> = (0..rows.len())
            .filter(|&i| args.known.is_empty() || args.known.iter().any(|k| k == truth[i]))
            .collect();
        let kt: Vec<&str> = known_rows.iter().map(|&i| truth[i]).collect();
        let kp: Vec<&str> = known_rows.iter().map(|&i| preds[i]).collect();
        match closed_error(&kp, &kt) {
            Ok(v) => out.push(("closed_error".into(), v.to_string())),
            Err(e) => undefined("closed_error", e.to_string()),
        }
        let mut labels: Vec<&str> = kt.clone();
        labels.sort_unstable();
        labels.dedup();
        match classification_report(&kp, &kt, &labels) {
            Ok(r) => {
                out.push(("accuracy".into(), r.accuracy.to_string()));
                out.push(("macro_f1".into(), r.macro_f1.to_string()));
            }
            Err(e) => undefined("accuracy", e.to_string()),
        }
        if !args.known.is_empty() {
            let ground = GroundTruth::new(
                truth.iter().map(|s| s.to_string()).collect(),
                args.known.iter().cloned(),
            );
            match open_set_error(&preds, &ground) {
                Ok(e) => {
                    out.push(("epsilon_os".into(), e.total.to_string()));
                    out.push(("unknown_miss_rate".into(), e.unknown_miss.to_string()));
                }
                Err(e) => undefined("epsilon_os", e.to_string()),
            }
        }
    }

    if let Some(path) = &args.clusters {
        let rows = read_rows(path, &["sample_id", "cluster", "truth_label"])?;
        let feature_cols: Vec<String> = rows[0]
            .keys()
            .filter(|k| !["sample_id", "cluster", "truth_label"].contains(&k.as_str()))
            .cloned()
            .collect();
        let mut points = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let c: i64 = r["cluster"]
                .parse()
                .with_context(|| format!("row {}: bad cluster {:?}", i + 1, r["cluster"]))?;
            labels.push(usize::try_from(c).ok());
            let p: Vec<f64> = feature_cols
                .iter()
                .map(|k| {
                    r[k].parse::<f64>()
                        .with_context(|| format!("row {}: bad {k} {:?}", i + 1, r[k]))
                })
                .collect::<Result<_>>()?;
            points.push(p);
        }
        let truth: Vec<&str> = rows.iter().map(|r| r["truth_label"].as_str()).collect();
        let cluster_ids: Vec<i64> = labels.iter().map(|l| l.map_or(-1, |c| c as i64)).collect();
        let set = ClusterSet::from_labels(&points, labels)?;
        out.push(("n_clusters".into(), set.n_clusters().to_string()));
        if feature_cols.is_empty() {
            undefined("davies_bouldin", "no feature columns".into());
        } else {
            match davies_bouldin(&set) {
                Ok(v) => out.push(("davies_bouldin".into(), v.to_string())),
                Err(e) => undefined("davies_bouldin", e.to_string()),
            }
        }
        match v_measure(&cluster_ids, &truth, VMeasureParams { beta: args.beta }) {
            Ok(v) => out.push(("v_measure".into(), v.to_string())),
            Err(e) => undefined("v_measure", e.to_string()),
        }
        if !args.known.is_empty() {
            let round: Vec<String> = match &predictions {
                Some(p) => p.iter().map(|r| r["truth_label"].clone()).collect(),
                None => truth.iter().map(|s| s.to_string()).collect(),
            };
            let ground = GroundTruth::new(round, args.known.iter().cloned());
            let mut scores = Vec::new();
            for c in 0..set.n_clusters() {
                let members: Vec<&str> = set.members(c).iter().map(|&m| truth[m]).collect();
                match ica_components(&members, &ground) {
                    Ok(b) => {
                        out.push((format!("cluster{c}_homogeneity"), b.homogeneity.to_string()));
                        out.push((
                            format!("cluster{c}_completeness"),
                            b.completeness.to_string(),
                        ));
                        out.push((format!("cluster{c}_uia"), b.uia.to_string()));
                        scores.push(b.ica);
                    }
                    Err(e) => undefined("ica", e.to_string()),
                }
            }
            if !scores.is_empty() {
                out.push((
                    "ica".into(),
                    (scores.iter().sum::<f64>() / scores.len() as f64).to_string(),
                ));
            }
        }
    }

    let mut writer = csv::Writer::from_writer(std::io::stdout());
    writer.write_record(["metric", "value"])?;
    for (k, v) in out {
        writer.write_record([k, v])?;
    }
    writer.flush()?;
    Ok(ExitCode::SUCCESS)
}
