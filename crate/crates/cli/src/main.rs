//! `budgetsp` — the pipeline driver for budgeted structured prediction.
//!
//! Five subcommands wire the library stages together: `train-predictor`
//! fits a tiered model, `pseudo-labels` searches acquisition targets,
//! `train-policy` learns a one-shot or anytime acquisition policy,
//! `eval` scores any policy on held-out data, and `sweep` produces a whole
//! accuracy-versus-cost curve in one run.
//!
//! Every artifact-writing command also writes `<artifact>.manifest.json`
//! with the resolved configuration and SHA-256 digests of inputs and
//! outputs; identical inputs and seeds give byte-identical artifacts.
//!
//! Exit codes: 0 success; 2 usage (bad flags, invalid parameters, the
//! exhaustive-search size guard); 3 data (unreadable or malformed inputs,
//! mismatched artifacts); 4 internal.

mod commands;
mod config;
mod corpus;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{
    CostPresetArg, DataError, FixedPolicyArg, LossArg, MetricArg, PolicyKindArg, SearchArg,
    TaskArg, UsageError,
};

#[derive(Parser)]
#[command(name = "budgetsp", version, about = "Structured prediction under feature budgets")]
struct Cli {
    /// JSON config file; any flag given on the command line overrides the
    /// matching config field.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tiered predictor (chain labeler or dependency parser).
    TrainPredictor(TrainPredictorArgs),
    /// Search acquisition pseudo-labels for every example.
    PseudoLabels(PseudoLabelsArgs),
    /// Train a one-shot or anytime acquisition policy.
    TrainPolicy(TrainPolicyArgs),
    /// Evaluate a policy (trained or baseline) on a dataset.
    Eval(EvalArgs),
    /// Produce a full accuracy-versus-cost curve with baselines.
    Sweep(SweepArgs),
}

/// Where the examples come from: a dataset file or the built-in generator.
#[derive(Args)]
struct DataFlags {
    /// Task family.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Dataset file: tab-separated letter rows (chain) or CoNLL-U (dep).
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Generate the task's synthetic corpus instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    /// Synthetic: number of sequences / sentences.
    #[arg(long, value_name = "N")]
    synthetic_count: Option<usize>,
    /// Synthetic: generator seed.
    #[arg(long, value_name = "SEED")]
    synthetic_seed: Option<u64>,
    /// Synthetic chain: pixel-flip rate on hard positions.
    #[arg(long, value_name = "RATE")]
    synthetic_noise: Option<f64>,
    /// Synthetic chain: fraction of degraded positions.
    #[arg(long, value_name = "FRAC")]
    synthetic_hard: Option<f64>,
    /// Synthetic chain: alphabet size.
    #[arg(long, value_name = "N")]
    synthetic_alphabet: Option<usize>,
    /// Synthetic treebank: fraction of sentences with the ambiguous phrase.
    #[arg(long, value_name = "FRAC")]
    synthetic_pp: Option<f64>,
    /// Drop the first N examples (carve held-out splits from one corpus).
    #[arg(long, value_name = "N")]
    skip: Option<usize>,
    /// Keep only N examples after skipping.
    #[arg(long, value_name = "N")]
    take: Option<usize>,
}

/// Predictor training hyperparameters (also used to fit fold predictors
/// inside `train-policy` and `sweep`).
#[derive(Args)]
struct PredictorFlags {
    /// Training epochs for the structured perceptron.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Perceptron step size.
    #[arg(long, value_name = "F")]
    learning_rate: Option<f64>,
    /// Label alphabet size for chain dataset files (synthetic corpora use
    /// their own alphabet).
    #[arg(long, value_name = "N")]
    alphabet: Option<usize>,
    /// Hashed feature-space size per tier (dep).
    #[arg(long, value_name = "N")]
    tier_dim: Option<usize>,
    /// Gate lexical features on the dependent word instead of the head (dep).
    #[arg(long)]
    gate_on_dependent: bool,
}

/// Pseudo-label search settings.
#[derive(Args)]
struct OracleFlags {
    /// Search strategy for acquisition targets.
    #[arg(long, value_enum)]
    search: Option<SearchArg>,
    /// Acquisition-pressure multiplier on feature cost.
    #[arg(long, value_name = "F")]
    lambda: Option<f64>,
    /// Prediction loss inside the search objective.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Improvement margin for the parsimonious search.
    #[arg(long, value_name = "F")]
    tau: Option<f64>,
}

/// Cost schedule: a preset with optional per-field overrides.
#[derive(Args)]
struct CostFlags {
    /// Cost preset (default: ocr for chain, paper-parse for dep).
    #[arg(long, value_enum)]
    cost_preset: Option<CostPresetArg>,
    /// Per-tier acquisition prices, comma-separated (overrides the preset).
    #[arg(long, value_name = "LIST")]
    tier_costs: Option<String>,
    /// Price of one decode call.
    #[arg(long, value_name = "F")]
    inference_cost: Option<f64>,
    /// Price of one policy call.
    #[arg(long, value_name = "F")]
    policy_cost: Option<f64>,
    /// HOG-tier price inside the ocr preset.
    #[arg(long, value_name = "F")]
    hog_cost: Option<f64>,
}

#[derive(Args)]
struct TrainPredictorArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    predictor: PredictorFlags,
    /// Training seed (sampled acquisition states during training).
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Output model file (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct PseudoLabelsArgs {
    #[command(flatten)]
    data: DataFlags,
    /// Trained predictor file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[command(flatten)]
    oracle: OracleFlags,
    #[command(flatten)]
    costs: CostFlags,
    /// Record the full greedy state trace per example (trajectory search
    /// only).
    #[arg(long)]
    dump_trajectory: bool,
    /// Output JSON-lines file: one record per example.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPolicyArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    predictor: PredictorFlags,
    #[command(flatten)]
    oracle: OracleFlags,
    #[command(flatten)]
    costs: CostFlags,
    /// Policy family to train.
    #[arg(long, value_enum)]
    kind: Option<PolicyKindArg>,
    /// Folds for out-of-fold pseudo-labeling.
    #[arg(long, value_name = "N")]
    n_folds: Option<usize>,
    /// Seed for folds and policy optimization.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Policy optimizer epochs (one-shot) .
    #[arg(long, value_name = "N")]
    policy_epochs: Option<usize>,
    /// L2 regularization of the policy optimizer.
    #[arg(long, value_name = "F")]
    reg: Option<f64>,
    /// Step-size offset of the policy optimizer.
    #[arg(long, value_name = "F")]
    t0: Option<f64>,
    /// Positive-class weight per acquirable tier, comma-separated.
    #[arg(long, value_name = "LIST")]
    class_weights: Option<String>,
    /// Train with unit weights instead of importance weights.
    #[arg(long)]
    no_importance_weights: bool,
    /// Optimizer epochs per step (anytime).
    #[arg(long, value_name = "N")]
    epochs_per_step: Option<usize>,
    /// Also write the decomposed training rows as JSON lines (one-shot).
    #[arg(long, value_name = "FILE")]
    rows_out: Option<PathBuf>,
    /// Output policy file (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataFlags,
    /// Trained predictor file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Trained policy file (one-shot or anytime).
    #[arg(long, value_name = "FILE", conflicts_with = "policy")]
    policy_file: Option<PathBuf>,
    /// Baseline policy.
    #[arg(long, value_enum)]
    policy: Option<FixedPolicyArg>,
    /// Interrupt budgets for an anytime policy, comma-separated; `inf`
    /// allowed.
    #[arg(long, value_name = "LIST")]
    budgets: Option<String>,
    /// Acquired fraction for the uniform baseline.
    #[arg(long, value_name = "FRAC")]
    uniform_fraction: Option<f64>,
    /// Confidence threshold for the myopic baseline.
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    /// Accuracy metric (default: letter-accuracy for chain, uas for dep).
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Value written to the first CSV column for single-row evaluations.
    #[arg(long, value_name = "F")]
    control: Option<f64>,
    /// Seed for the uniform baseline's random draws.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    costs: CostFlags,
    /// Write per-example anytime execution traces as JSON lines.
    #[arg(long, value_name = "FILE")]
    dump_traces: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataFlags,
    /// Training split file (overrides --data/--synthetic splitting).
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    /// Held-out split file.
    #[arg(long, value_name = "FILE")]
    test: Option<PathBuf>,
    /// Examples kept for training when splitting one corpus.
    #[arg(long, value_name = "N")]
    train_count: Option<usize>,
    #[command(flatten)]
    predictor: PredictorFlags,
    /// Acquisition-pressure values, comma-separated ascending.
    #[arg(long, value_name = "LIST")]
    lambdas: Option<String>,
    #[command(flatten)]
    oracle_rest: SweepOracleFlags,
    #[command(flatten)]
    costs: CostFlags,
    /// Folds for out-of-fold pseudo-labeling.
    #[arg(long, value_name = "N")]
    n_folds: Option<usize>,
    /// Seed driving folds, policy training, and uniform draws.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Policy optimizer epochs.
    #[arg(long, value_name = "N")]
    policy_epochs: Option<usize>,
    /// L2 regularization of the policy optimizer.
    #[arg(long, value_name = "F")]
    reg: Option<f64>,
    /// Step-size offset of the policy optimizer.
    #[arg(long, value_name = "F")]
    t0: Option<f64>,
    /// Positive-class weight per acquirable tier, comma-separated.
    #[arg(long, value_name = "LIST")]
    class_weights: Option<String>,
    /// Train with unit weights instead of importance weights.
    #[arg(long)]
    no_importance_weights: bool,
    /// Uniform-baseline acquisition fractions, comma-separated.
    #[arg(long, value_name = "LIST")]
    uniform_fractions: Option<String>,
    /// Random draws averaged per uniform fraction.
    #[arg(long, value_name = "N")]
    uniform_repeats: Option<usize>,
    /// Myopic-baseline confidence thresholds, comma-separated.
    #[arg(long, value_name = "LIST")]
    myopic_thresholds: Option<String>,
    /// Accuracy metric.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Output curve CSV file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// `--search`/`--loss`/`--tau` for sweep (no single `--lambda` here).
#[derive(Args)]
struct SweepOracleFlags {
    /// Search strategy for acquisition targets.
    #[arg(long, value_enum)]
    search: Option<SearchArg>,
    /// Prediction loss inside the search objective.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Improvement margin for the parsimonious search.
    #[arg(long, value_name = "F")]
    tau: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config::usage(format!("--jobs: {e}")))?;
    }
    let cfg = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::TrainPredictor(args) => commands::train_predictor(args, &cfg),
        Command::PseudoLabels(args) => commands::pseudo_labels(args, &cfg),
        Command::TrainPolicy(args) => commands::train_policy(args, &cfg),
        Command::Eval(args) => commands::eval(args, &cfg),
        Command::Sweep(args) => commands::sweep(args, &cfg),
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<DataError>().is_some() {
            return 3;
        }
        if let Some(lib) = cause.downcast_ref::<budgetsp::Error>() {
            return match lib {
                budgetsp::Error::InvalidParameter(_)
                | budgetsp::Error::StateSpaceTooLarge { .. } => 2,
                budgetsp::Error::DataFormat { .. }
                | budgetsp::Error::Io(_)
                | budgetsp::Error::EmptyInput(_)
                | budgetsp::Error::DimensionMismatch(_)
                | budgetsp::Error::Json(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 3;
        }
    }
    4
}
