//! Test-time execution: run a policy on one example, decode once, and account
//! for every cost unit spent.
//!
//! The ledger tracks three currencies — feature acquisition cost, inference
//! calls, and policy calls — and converts them to a scalar with
//! [`CostLedger::total`]. Conventions:
//!
//! * learned policies are charged per invocation (one call for one-shot, one
//!   per step for anytime);
//! * the myopic baseline's gate is itself an inference pass, so a fired gate
//!   costs two inference calls and an unfired one costs one;
//! * the uniform baseline and fixed-state anchors decide for free.
//!
//! Anytime execution decodes only at the stopping state: policy features
//! never look at predictor output, so intermediate decoding would buy
//! nothing. The budget guard is checked in feature-cost units before each
//! acquisition, which means the final state may overshoot the budget by at
//! most one tier cost.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{uniform_policy, AnytimePolicy, OneShotPolicy, PolicyInstrumented};
use crate::state::{
    state_cost, AcquisitionState, BudgetedExample, CostSchedule, MarginPredictor, Predictor,
    StructuredLabel,
};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub feature_cost: f64,
    pub inference_calls: u64,
    pub policy_calls: u64,
}

impl CostLedger {
    pub fn zero() -> Self {
        CostLedger::default()
    }

    pub fn total(&self, sched: &CostSchedule) -> f64 {
        self.feature_cost
            + self.inference_calls as f64 * sched.inference_cost
            + self.policy_calls as f64 * sched.policy_cost
    }

    pub fn add(&mut self, other: &CostLedger) {
        self.feature_cost += other.feature_cost;
        self.inference_calls += other.inference_calls;
        self.policy_calls += other.policy_calls;
    }
}

/// Everything one anytime run did: the monotone state walk, a ledger snapshot
/// after each step (index 0 is the starting state), and the single prediction
/// decoded at the stopping state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub states: Vec<AcquisitionState>,
    pub ledgers: Vec<CostLedger>,
    pub prediction: StructuredLabel,
}

impl ExecutionTrace {
    pub fn final_ledger(&self) -> &CostLedger {
        self.ledgers.last().expect("trace has at least the starting state")
    }
}

/// One policy call decides the whole state, one inference decodes under it.
pub fn run_oneshot<X, P>(
    x: &X,
    policy: &OneShotPolicy,
    predictor: &P,
    sched: &CostSchedule,
) -> Result<(StructuredLabel, CostLedger)>
where
    X: PolicyInstrumented,
    P: Predictor<Example = X>,
{
    let state = policy.decide(x);
    let prediction = predictor.predict(x, &state)?;
    let ledger = CostLedger {
        feature_cost: state_cost(&state, sched)?,
        inference_calls: 1,
        policy_calls: 1,
    };
    Ok((prediction, ledger))
}

/// Acquire one bit per step while acquirable bits remain and the feature cost
/// stays strictly under `budget`; then decode once. Every step is one policy
/// call; the guard runs before acquiring, so the final cost exceeds the
/// budget by at most the priciest tier.
pub fn run_anytime<X, P>(
    x: &X,
    policy: &AnytimePolicy,
    predictor: &P,
    sched: &CostSchedule,
    budget: f64,
) -> Result<(StructuredLabel, ExecutionTrace)>
where
    X: PolicyInstrumented,
    P: Predictor<Example = X>,
{
    if !(budget >= 0.0) {
        return Err(Error::InvalidParameter(format!("budget must be >= 0, got {budget}")));
    }
    let mut state = AcquisitionState::zero(policy.num_tiers, x.num_parts());
    let mut ledger = CostLedger::zero();
    let mut states = vec![state.clone()];
    let mut ledgers = vec![ledger.clone()];
    let mut step = 0;
    while !state.is_full_acquirable() && state_cost(&state, sched)? < budget {
        let (_, next) = policy.choose(x, &state, step)?;
        state = next;
        ledger.policy_calls += 1;
        ledger.feature_cost = state_cost(&state, sched)?;
        states.push(state.clone());
        ledgers.push(ledger.clone());
        step += 1;
    }
    let prediction = predictor.predict(x, &state)?;
    ledger.inference_calls += 1;
    *ledgers.last_mut().unwrap() = ledger;
    Ok((prediction.clone(), ExecutionTrace { states, ledgers, prediction }))
}

/// Acquires `bits` uniformly random acquirable bits (fewer if the state
/// fills up first) and decodes once. The random choice is free: no policy
/// calls are charged.
pub fn run_uniform<X, P, R>(
    x: &X,
    predictor: &P,
    sched: &CostSchedule,
    bits: usize,
    rng: &mut R,
) -> Result<(StructuredLabel, CostLedger)>
where
    X: BudgetedExample,
    P: Predictor<Example = X>,
    R: Rng,
{
    let mut state = AcquisitionState::zero(predictor.num_tiers(), x.num_parts());
    for _ in 0..bits {
        if state.is_full_acquirable() {
            break;
        }
        state = uniform_policy(&state, rng)?;
    }
    let prediction = predictor.predict(x, &state)?;
    let ledger = CostLedger {
        feature_cost: state_cost(&state, sched)?,
        inference_calls: 1,
        policy_calls: 0,
    };
    Ok((prediction, ledger))
}

/// Confidence-gated all-or-nothing acquisition. The gate decodes once on
/// cheap features; examples below `threshold` acquire everything and decode
/// again, so their ledgers show two inference calls.
pub fn run_myopic<X, P>(
    x: &X,
    predictor: &P,
    sched: &CostSchedule,
    threshold: f64,
) -> Result<(StructuredLabel, CostLedger)>
where
    X: BudgetedExample,
    P: MarginPredictor<Example = X>,
{
    let state = crate::policy::myopic_policy(x, predictor, threshold)?;
    let acquired = state.count_ones() > 0;
    let prediction = predictor.predict(x, &state)?;
    let ledger = CostLedger {
        feature_cost: state_cost(&state, sched)?,
        inference_calls: 1 + u64::from(acquired),
        policy_calls: 0,
    };
    Ok((prediction, ledger))
}

/// Decodes under a caller-chosen state; the anchor runner for curve
/// endpoints.
pub fn run_fixed_state<X, P>(
    x: &X,
    predictor: &P,
    sched: &CostSchedule,
    state: &AcquisitionState,
) -> Result<(StructuredLabel, CostLedger)>
where
    X: BudgetedExample,
    P: Predictor<Example = X>,
{
    let prediction = predictor.predict(x, state)?;
    let ledger = CostLedger {
        feature_cost: state_cost(state, sched)?,
        inference_calls: 1,
        policy_calls: 0,
    };
    Ok((prediction, ledger))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Fraction of sequence positions labeled correctly.
    LetterAccuracy,
    /// Fraction of words attached to the correct head.
    Uas,
    /// 1 if the whole structure is exactly right, else 0.
    Indicator,
}

impl Metric {
    pub fn score(&self, prediction: &StructuredLabel, gold: &StructuredLabel) -> Result<f64> {
        if prediction.0.len() != gold.0.len() {
            return Err(Error::DimensionMismatch(format!(
                "prediction has {} parts, gold has {}",
                prediction.0.len(),
                gold.0.len()
            )));
        }
        if prediction.0.is_empty() {
            return Err(Error::EmptyInput("scoring an empty structure"));
        }
        let correct = prediction.0.iter().zip(&gold.0).filter(|(a, b)| a == b).count();
        Ok(match self {
            Metric::LetterAccuracy | Metric::Uas => correct as f64 / gold.0.len() as f64,
            Metric::Indicator => f64::from(u8::from(correct == gold.0.len())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub accuracy: f64,
    pub ledger: CostLedger,
}

/// Dataset-level aggregation: means plus the per-example records they were
/// computed from. `wall_ms` is observational only — never asserted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_accuracy: f64,
    pub mean_feature_cost: f64,
    pub mean_inference_calls: f64,
    pub mean_policy_calls: f64,
    pub mean_total_cost: f64,
    pub records: Vec<ExampleRecord>,
    pub wall_ms: f64,
}

/// Runs `runner` on every example in parallel (record order preserved) and
/// aggregates metric and ledger means.
pub fn evaluate<X, F>(
    data: &[X],
    runner: F,
    metric: Metric,
    sched: &CostSchedule,
) -> Result<EvalSummary>
where
    X: BudgetedExample + Sync,
    F: Fn(usize, &X) -> Result<(StructuredLabel, CostLedger)> + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    let start = Instant::now();
    let records: Vec<ExampleRecord> = data
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            let (prediction, ledger) = runner(index, x)?;
            let accuracy = metric.score(&prediction, x.gold())?;
            Ok(ExampleRecord { index, accuracy, ledger })
        })
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let mut sum = CostLedger::zero();
    let mut total = 0.0;
    let mut acc = 0.0;
    for r in &records {
        sum.add(&r.ledger);
        total += r.ledger.total(sched);
        acc += r.accuracy;
    }
    Ok(EvalSummary {
        mean_accuracy: acc / n,
        mean_feature_cost: sum.feature_cost / n,
        mean_inference_calls: sum.inference_calls as f64 / n,
        mean_policy_calls: sum.policy_calls as f64 / n,
        mean_total_cost: total / n,
        records,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One row of the evaluation summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCsvRow {
    pub budget_or_lambda: f64,
    pub accuracy: f64,
    pub feature_cost: f64,
    pub inference_calls: f64,
    pub policy_calls: f64,
    pub total_cost: f64,
}

impl EvalCsvRow {
    pub fn from_summary(control: f64, summary: &EvalSummary) -> Self {
        EvalCsvRow {
            budget_or_lambda: control,
            accuracy: summary.mean_accuracy,
            feature_cost: summary.mean_feature_cost,
            inference_calls: summary.mean_inference_calls,
            policy_calls: summary.mean_policy_calls,
            total_cost: summary.mean_total_cost,
        }
    }
}

pub fn write_eval_csv<W: Write>(rows: &[EvalCsvRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "budget_or_lambda,accuracy,feature_cost,inference_calls,policy_calls,total_cost"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.budget_or_lambda, r.accuracy, r.feature_cost, r.inference_calls, r.policy_calls,
            r.total_cost
        )?;
    }
    Ok(())
}

/// Writes one JSON object per trace, matching the policy-row dump style.
pub fn dump_traces_jsonl<W: Write>(traces: &[ExecutionTrace], mut out: W) -> Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut out, trace)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
