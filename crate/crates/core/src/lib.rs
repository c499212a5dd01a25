//! Structured prediction under test-time feature budgets.
//!
//! A structured predictor (a linear-chain sequence labeler or an arc-factored
//! dependency parser) can score each part of its input with feature tiers of
//! increasing cost. Which tier is active for which part is recorded in an
//! [`AcquisitionState`]; the central quantity everywhere is the modified loss
//! `L(F(X, S), Y) + lambda * c(S)` that trades prediction quality against the
//! feature cost `c(S)` of the state `S`.
//!
//! The crate provides:
//!
//! * [`state`] — acquisition states, cost schedules, losses, modified loss;
//! * [`chain`] — glyph sequence labeling (pixels + HOG tiers, Viterbi decoding,
//!   averaged structured perceptron trained under randomly sampled states);
//! * [`dep`] — arc-factored dependency parsing (POS + lexical tiers,
//!   Chu-Liu-Edmonds decoding) with the same training scheme;
//! * [`oracle`] — exhaustive, greedy-trajectory, and parsimonious searches that
//!   turn examples into acquisition pseudo-labels with importance weights;
//! * [`policy`] — one-shot and anytime acquisition policies learned from those
//!   pseudo-labels, plus uniform-random and confidence-threshold baselines;
//! * [`runtime`] — budgeted execution of policies with exact cost ledgers;
//! * [`data`] / [`sweep`] — dataset loaders, synthetic corpus generators, and
//!   the trade-off-curve sweep harness.

pub mod chain;
pub mod data;
pub mod dep;
pub mod oracle;
pub mod policy;
pub mod runtime;
pub mod state;
pub mod sweep;
pub(crate) mod util;

pub use state::{
    acquirable_successors, feasible_successors, hamming_loss, indicator_loss, modified_loss,
    state_cost, state_hamming_distance, AcquisitionState, BudgetedExample, CostSchedule, LossKind,
    MarginPredictor, ModifiedLossParams, Predictor, StateSampler, StructuredLabel,
};

/// Errors shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "state space too large: {bits} bits exceed the exhaustive-search limit of {limit}; \
         use trajectory or parsimonious search instead"
    )]
    StateSpaceTooLarge { bits: usize, limit: usize },
    #[error("data format error at line {line}: {message}")]
    DataFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
