//! Command-line front end: experiment runs, verification sweeps, a worked
//! relation table, and gradient spot checks.
//!
//! Exit codes: 0 success, 1 a verification command found a violated
//! property, 2 bad configuration or arguments, 3 a numeric failure during
//! training (divergence or a degenerate dataset).

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use simdis::losses::Strategy;
use simdis::metrics::evaluate_all;
use simdis::synth::{generate, Dataset, SynthSpec};
use simdis::trainer::{probe_predictions, train_two_phase, TrainConfig};
use simdis::verify::grad_check_suite;
use simdis::{check_theorems, pair_factors, CheckMode, LabelSet, PenaltyKind};

#[derive(Parser)]
#[command(
    name = "simdis",
    version,
    about = "Multi-label contrastive training with set-relation re-weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic or imported data and write metrics, trace, and
    /// checkpoint files.
    Run(RunArgs),
    /// Check the weighting laws exhaustively on small universes, then on
    /// randomized large-universe pairs, then spot-check gradients.
    Verify(VerifyArgs),
    /// Print the worked five-relation example with exact factor values.
    CaseAnalysis,
    /// Compare analytic loss gradients against finite differences.
    GradCheck(GradArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the training strategy (e.g. "any", "mulsupcon",
    /// "simdis:outside_log"); outputs then go to a per-strategy
    /// subdirectory of the output directory.
    #[arg(long)]
    strategy: Option<String>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    dump_defaults: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Randomized trials per property.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Universe size for the randomized sweep.
    #[arg(long, default_value_t = 20)]
    universe: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Random batches per strategy in the gradient suite.
    #[arg(long, default_value_t = 4)]
    grad_batches: usize,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Random batches per strategy.
    #[arg(long, default_value_t = 8)]
    batches: usize,
}

/// Where the training features and labels come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DataSource {
    /// Generate a long-tailed multi-label dataset in memory.
    Synth(SynthSpec),
    /// Read `{"features": [...], "labels": [...]}` lines from a file.
    Jsonl {
        path: PathBuf,
        /// Augmentation noise scale used during contrastive training.
        #[serde(default)]
        augment_sigma: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentConfig {
    data: DataSource,
    train: TrainConfig,
    output_dir: PathBuf,
    /// Cutoffs for precision-at-k; values above the class count are skipped.
    metrics_k: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthSpec::default()),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            metrics_k: vec![5, 8],
        }
    }
}

enum Failure {
    /// Bad config file, bad arguments, or a refusal to overwrite. Exit 2.
    Config(String),
    /// Non-finite training values or a degenerate dataset. Exit 3.
    Numeric(String),
    /// A verification command found violations. Exit 1.
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Config(m) | Failure::Numeric(m) => m,
        }
    }
}

fn classify(err: simdis::Error) -> Failure {
    match err {
        simdis::Error::NonFinite(_) | simdis::Error::Degenerate(_) => {
            Failure::Numeric(err.to_string())
        }
        other => Failure::Config(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::CaseAnalysis => cmd_case_analysis(),
        Command::GradCheck(args) => cmd_grad_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn parse_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    if args.dump_defaults {
        let text = serde_json::to_string_pretty(&ExperimentConfig::default()).expect("serialize");
        println!("{text}");
        return Ok(());
    }

    let mut config = match &args.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(text) = &args.strategy {
        config.train.strategy =
            Strategy::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.train.validate().map_err(classify)?;
    if config.metrics_k.contains(&0) {
        return Err(Failure::Config("metrics_k entries must be positive".into()));
    }

    let mut out_dir = args.output.unwrap_or_else(|| config.output_dir.clone());
    if args.strategy.is_some() {
        out_dir = out_dir.join(config.train.strategy.slug());
    }
    let metrics_path = out_dir.join("metrics.json");
    if metrics_path.exists() && !args.force {
        return Err(Failure::Config(format!(
            "{} already exists; pass --force to overwrite",
            metrics_path.display()
        )));
    }
    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out_dir.display())))?;

    let (dataset, generated) = match &config.data {
        DataSource::Synth(spec) => (generate(spec).map_err(classify)?, true),
        DataSource::Jsonl {
            path,
            augment_sigma,
        } => {
            let file = fs::File::open(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut dataset = Dataset::read_jsonl(BufReader::new(file)).map_err(classify)?;
            dataset.augment_sigma = *augment_sigma;
            (dataset, false)
        }
    };
    eprintln!(
        "dataset: {} samples, {} classes, {} features, mean cardinality {:.2}",
        dataset.len(),
        dataset.universe_size(),
        dataset.feature_dim(),
        dataset.mean_cardinality()
    );

    let started = Instant::now();
    let (model, trace) = train_two_phase(&dataset, &config.train).map_err(classify)?;
    let predictions = probe_predictions(&model, &dataset).map_err(classify)?;
    let ks: Vec<usize> = config
        .metrics_k
        .iter()
        .copied()
        .filter(|k| *k <= dataset.universe_size())
        .collect();
    let metrics = evaluate_all(&predictions, &ks).map_err(classify)?;
    eprintln!(
        "trained {} in {:.1}s",
        config.train.strategy,
        started.elapsed().as_secs_f64()
    );

    let write = |name: &str, contents: &str| -> Result<(), Failure> {
        let path = out_dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(())
    };
    write("metrics.json", &metrics.to_json())?;
    write("trace.csv", &trace.to_csv())?;
    let checkpoint = serde_json::json!({
        "config": config,
        "params": model.to_json_value(),
    });
    let mut checkpoint_text =
        serde_json::to_string_pretty(&checkpoint).expect("checkpoint serialize");
    checkpoint_text.push('\n');
    write("checkpoint.json", &checkpoint_text)?;
    if generated {
        let path = out_dir.join("dataset.jsonl");
        let file = fs::File::create(&path)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        dataset
            .write_jsonl(BufWriter::new(file))
            .map_err(classify)?;
        println!("wrote {}", path.display());
    }

    for (name, value) in metrics.to_flat_map() {
        println!("{name} = {value:.4}");
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for universe in 2..=5 {
        reports.extend(check_theorems(universe, CheckMode::Exhaustive).map_err(classify)?);
    }
    reports.extend(
        check_theorems(
            args.universe,
            CheckMode::Randomized {
                trials: args.trials,
                seed: args.seed,
            },
        )
        .map_err(classify)?,
    );
    reports.extend(grad_check_suite(args.seed, args.grad_batches).map_err(classify)?);

    let mut failed = 0usize;
    for report in &reports {
        println!("{}", report.to_json_line());
        if !report.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!(
            "{failed} of {} checks failed",
            reports.len()
        )));
    }
    eprintln!("all {} checks passed", reports.len());
    Ok(())
}

/// The worked example: anchor {0, 1, 2} in a six-label universe against one
/// sample per relation, with exact factors under the reciprocal penalty.
fn cmd_case_analysis() -> Result<(), Failure> {
    let universe = 6;
    let anchor = LabelSet::from_indices(universe, [0, 1, 2]).expect("anchor");
    let cases: [(&str, &[usize]); 5] = [
        ("T1", &[3, 4, 5]),
        ("T2", &[0, 1, 2]),
        ("T3", &[0, 3, 4]),
        ("T4", &[0, 1]),
        ("T5", &[0, 1, 2, 3, 4]),
    ];
    // Frozen exact values: (relation code, overlap, excess, K^s, K^d, weight).
    let expected = [
        ("R1", 0, 3, "0", "1/4", "0"),
        ("R2", 3, 0, "1", "1", "1"),
        ("R3", 1, 2, "1/3", "1/3", "1/9"),
        ("R4", 2, 0, "2/3", "1", "2/3"),
        ("R5", 3, 2, "1", "1/3", "1/3"),
    ];

    println!("anchor S = {anchor}, universe {universe}, reciprocal penalty");
    println!(
        "{:<5} {:<12} {:<4} {:<17} {:>7} {:>6} {:>5} {:>5} {:>6}",
        "case", "sample", "rel", "relation", "overlap", "excess", "K^s", "K^d", "weight"
    );
    let mut mismatches = 0usize;
    for ((name, members), expect) in cases.iter().zip(expected) {
        let sample = LabelSet::from_indices(universe, members.iter().copied()).expect("sample");
        let factors = pair_factors(&anchor, &sample, PenaltyKind::Reciprocal).map_err(classify)?;
        let exact = factors.exact().expect("reciprocal penalty is exact");
        let row = (
            factors.relation.code(),
            factors.overlap,
            factors.excess,
            exact.similarity.to_string(),
            exact.dissimilarity.to_string(),
            exact.weight.to_string(),
        );
        println!(
            "{:<5} {:<12} {:<4} {:<17} {:>7} {:>6} {:>5} {:>5} {:>6}",
            name,
            sample.to_string(),
            row.0,
            factors.relation.to_string(),
            row.1,
            row.2,
            row.3,
            row.4,
            row.5
        );
        let want = (
            expect.0,
            expect.1,
            expect.2,
            expect.3.to_string(),
            expect.4.to_string(),
            expect.5.to_string(),
        );
        if row != want {
            eprintln!("mismatch in {name}: expected {want:?}, got {row:?}");
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Err(Failure::Check(format!(
            "{mismatches} of {} rows disagree with the frozen table",
            cases.len()
        )));
    }
    Ok(())
}

fn cmd_grad_check(args: GradArgs) -> Result<(), Failure> {
    let reports = grad_check_suite(args.seed, args.batches).map_err(classify)?;
    let mut failed = 0usize;
    for report in &reports {
        println!("{}", report.to_json_line());
        if !report.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!(
            "{failed} of {} gradient suites failed",
            reports.len()
        )));
    }
    eprintln!("all {} gradient suites passed", reports.len());
    Ok(())
}
