//! Config-file support. A single flat JSON schema covers every subcommand;
//! each field mirrors one command-line flag and the flag always wins. Unknown
//! keys are rejected so typos fail loudly instead of silently using defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

/// Usage mistakes detected after argument parsing (conflicting flags, missing
/// combinations, malformed lists). Mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Unreadable, malformed, or mismatched input files (wrong artifact format,
/// undecodable content). Mapped to exit code 3.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for DataError {}

pub fn data_error(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskArg {
    /// Letter-sequence labeling (pixels + HOG tiers).
    Chain,
    /// Dependency parsing (POS + lexical tiers).
    Dep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchArg {
    Exhaustive,
    Trajectory,
    Parsimonious,
}

impl SearchArg {
    pub fn to_kind(self) -> budgetsp::oracle::SearchKind {
        match self {
            SearchArg::Exhaustive => budgetsp::oracle::SearchKind::Exhaustive,
            SearchArg::Trajectory => budgetsp::oracle::SearchKind::Trajectory,
            SearchArg::Parsimonious => budgetsp::oracle::SearchKind::Parsimonious,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Hamming,
    Indicator,
}

impl LossArg {
    pub fn to_kind(self) -> budgetsp::LossKind {
        match self {
            LossArg::Hamming => budgetsp::LossKind::Hamming,
            LossArg::Indicator => budgetsp::LossKind::Indicator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    LetterAccuracy,
    Uas,
    Indicator,
}

impl MetricArg {
    pub fn to_metric(self) -> budgetsp::runtime::Metric {
        match self {
            MetricArg::LetterAccuracy => budgetsp::runtime::Metric::LetterAccuracy,
            MetricArg::Uas => budgetsp::runtime::Metric::Uas,
            MetricArg::Indicator => budgetsp::runtime::Metric::Indicator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKindArg {
    Oneshot,
    Anytime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostPresetArg {
    /// Pixels free, HOG tier at `hog_cost` per glyph, calls free.
    Ocr,
    /// 165-unit cheap tier, 110-unit lexical tier, 75 per inference call.
    PaperParse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPolicyArg {
    /// Acquire nothing; decode on the cheap tier.
    Zero,
    /// Acquire every acquirable bit.
    Full,
    /// Acquire a seeded random fraction of each example's bits.
    Uniform,
    /// Acquire all-or-nothing on a cheap-confidence threshold.
    Myopic,
}

/// One optional field per flag; see `docs in README` for the schema. All
/// subcommands share the schema, so a single experiment file can drive the
/// whole pipeline.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<TaskArg>,
    pub data: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: Option<bool>,
    pub synthetic_count: Option<usize>,
    pub synthetic_seed: Option<u64>,
    pub synthetic_noise: Option<f64>,
    pub synthetic_hard: Option<f64>,
    pub synthetic_alphabet: Option<usize>,
    pub synthetic_pp: Option<f64>,
    pub skip: Option<usize>,
    pub take: Option<usize>,
    pub train_count: Option<usize>,

    pub alphabet: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub tier_dim: Option<usize>,
    pub gate_on_dependent: Option<bool>,
    pub seed: Option<u64>,

    pub search: Option<SearchArg>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub loss: Option<LossArg>,
    pub tau: Option<f64>,

    pub cost_preset: Option<CostPresetArg>,
    pub tier_costs: Option<Vec<f64>>,
    pub inference_cost: Option<f64>,
    pub policy_cost: Option<f64>,
    pub hog_cost: Option<f64>,

    pub kind: Option<PolicyKindArg>,
    pub n_folds: Option<usize>,
    pub policy_epochs: Option<usize>,
    pub reg: Option<f64>,
    pub t0: Option<f64>,
    pub class_weights: Option<Vec<f64>>,
    pub no_importance_weights: Option<bool>,
    pub epochs_per_step: Option<usize>,

    pub budgets: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub uniform_fraction: Option<f64>,
    pub metric: Option<MetricArg>,
    pub control: Option<f64>,
    pub uniform_fractions: Option<Vec<f64>>,
    pub uniform_repeats: Option<usize>,
    pub myopic_thresholds: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("config file {}: {e}", path.display())))
    }
}

/// Parses a comma-separated float list; `inf` spells an unbounded budget.
pub fn parse_f64_list(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.eq_ignore_ascii_case("inf") {
                Ok(f64::INFINITY)
            } else {
                t.parse::<f64>().map_err(|_| usage(format!("{flag}: not a number: {t:?}")))
            }
        })
        .collect()
}
