//! The accuracy-versus-cost experiment harness.
//!
//! [`run_sweep`] walks a list of acquisition-pressure values λ and, for each
//! one, runs the full one-shot pipeline — out-of-fold predictors, pseudo-label
//! search, policy training, held-out evaluation — plus uniform and myopic
//! baseline curves and the two fixed anchors (nothing acquired, everything
//! acquired). A λ whose pipeline fails is recorded and skipped; the other
//! points still come out. [`run_budget_sweep`] traces an anytime policy over
//! a list of interrupt budgets.
//!
//! Out-of-fold predictors and the deployed full-data predictor do not depend
//! on λ, so they are trained once per sweep, not once per point.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::oracle::{
    exhaustive_pseudo_label, parsimonious_search, trajectory_search, PseudoLabel, SearchKind,
};
use crate::policy::{
    build_oneshot_rows, build_oof_predictions, train_oneshot, AnytimePolicy, OneShotParams,
    PolicyInstrumented,
};
use crate::runtime::{
    evaluate, run_anytime, run_fixed_state, run_myopic, run_oneshot, run_uniform, CostLedger,
    EvalSummary, Metric,
};
use crate::state::{
    state_cost, AcquisitionState, BudgetedExample, CostSchedule, MarginPredictor,
    ModifiedLossParams, Predictor, StructuredLabel,
};
use crate::util::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    Ocr,
    DepParse,
    Synthetic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub task: SweepTask,
    /// Acquisition-pressure values, ascending; one adaptive point each.
    pub lambdas: Vec<f64>,
    pub loss: crate::state::LossKind,
    pub search: SearchKind,
    /// Margin for the parsimonious search (ignored by the others).
    pub tau: f64,
    pub n_folds: usize,
    pub seed: u64,
    pub oneshot: OneShotParams,
    /// Uniform-baseline acquisition fractions, ascending in [0, 1].
    pub uniform_fractions: Vec<f64>,
    /// Random draws averaged per uniform fraction.
    pub uniform_repeats: usize,
    pub myopic_thresholds: Vec<f64>,
    pub metric: Metric,
}

impl SweepConfig {
    pub fn synthetic_defaults(num_tiers: usize) -> Self {
        SweepConfig {
            task: SweepTask::Synthetic,
            lambdas: vec![0.01, 0.05, 0.25],
            loss: crate::state::LossKind::Hamming,
            search: SearchKind::Trajectory,
            tau: 0.0,
            n_folds: 3,
            seed: 1,
            oneshot: OneShotParams::new(num_tiers),
            uniform_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            uniform_repeats: 3,
            myopic_thresholds: vec![0.05],
            metric: Metric::LetterAccuracy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::EmptyInput("sweep lambda list"));
        }
        let sorted = |xs: &[f64]| xs.windows(2).all(|w| w[0] <= w[1]);
        if !sorted(&self.lambdas) || self.lambdas.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidParameter("lambdas must be >= 0 and ascending".into()));
        }
        if !sorted(&self.uniform_fractions)
            || self.uniform_fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        {
            return Err(Error::InvalidParameter(
                "uniform fractions must be ascending within [0, 1]".into(),
            ));
        }
        if !self.uniform_fractions.is_empty() && self.uniform_repeats == 0 {
            return Err(Error::InvalidParameter("uniform_repeats must be >= 1".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::InvalidParameter("sweep needs >= 2 folds".into()));
        }
        Ok(())
    }
}

/// One point of one curve. `policy` names the curve ("oneshot", "anytime",
/// "uniform", "myopic", "anchor"); `control` is that curve's knob (λ, budget,
/// fraction, threshold, or 0/1 for the anchors).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub policy: String,
    pub control: f64,
    pub accuracy: f64,
    pub feature_cost: f64,
    pub inference_calls: f64,
    pub policy_calls: f64,
    pub total_cost: f64,
}

impl CurvePoint {
    fn from_summary(policy: &str, control: f64, s: &EvalSummary) -> Self {
        CurvePoint {
            policy: policy.to_string(),
            control,
            accuracy: s.mean_accuracy,
            feature_cost: s.mean_feature_cost,
            inference_calls: s.mean_inference_calls,
            policy_calls: s.mean_policy_calls,
            total_cost: s.mean_total_cost,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepError {
    pub control: f64,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<CurvePoint>,
    pub errors: Vec<SweepError>,
    /// Mean pseudo-label feature cost per λ on the training set; diagnostic
    /// for how hard each λ squeezes acquisition.
    pub pseudo_mean_costs: Vec<(f64, f64)>,
}

fn search_pseudo_label<X, P>(
    kind: SearchKind,
    tau: f64,
    x: &X,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
) -> Result<PseudoLabel>
where
    X: BudgetedExample,
    P: Predictor<Example = X>,
{
    match kind {
        SearchKind::Exhaustive => exhaustive_pseudo_label(x, x.gold(), predictor, params, sched),
        SearchKind::Trajectory => {
            trajectory_search(x, x.gold(), predictor, params, sched).map(|(label, _)| label)
        }
        SearchKind::Parsimonious => {
            parsimonious_search(x, x.gold(), predictor, params, sched, tau)
        }
    }
}

/// Full one-shot sweep. `train_fn` receives indices into `train` and returns
/// a predictor fit on that subset; it is called once per fold plus once for
/// the deployed full-data predictor.
pub fn run_sweep<X, P, TF>(
    train: &[X],
    test: &[X],
    mut train_fn: TF,
    sched: &CostSchedule,
    config: &SweepConfig,
) -> Result<SweepOutcome>
where
    X: PolicyInstrumented + Sync,
    P: Predictor<Example = X> + MarginPredictor<Example = X> + Sync,
    TF: FnMut(&[usize]) -> Result<P>,
{
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("sweep train/test data"));
    }
    let num_tiers = {
        let all: Vec<usize> = (0..train.len()).collect();
        let full_model = train_fn(&all)?;
        let tiers = full_model.num_tiers();
        (full_model, tiers)
    };
    let (full_model, num_tiers) = num_tiers;
    let oof = build_oof_predictions(train.len(), config.n_folds, config.seed, &mut train_fn)?;

    let mut outcome = SweepOutcome::default();

    // Fixed anchors: nothing acquired and everything acquirable acquired.
    for (control, state_of) in [
        (0.0, Box::new(|parts: usize| AcquisitionState::zero(num_tiers, parts))
            as Box<dyn Fn(usize) -> AcquisitionState + Sync>),
        (1.0, Box::new(|parts: usize| AcquisitionState::full_acquirable(num_tiers, parts))),
    ] {
        let summary = evaluate(
            test,
            |_, x| run_fixed_state(x, &full_model, sched, &state_of(x.num_parts())),
            config.metric,
            sched,
        )?;
        outcome.points.push(CurvePoint::from_summary("anchor", control, &summary));
    }

    // Uniform baseline: averaged over seeded repeats per fraction.
    for &fraction in &config.uniform_fractions {
        let mut acc = 0.0;
        let mut feature = 0.0;
        let mut inference = 0.0;
        let mut policy_calls = 0.0;
        let mut total = 0.0;
        for rep in 0..config.uniform_repeats {
            let rep_seed = derive_seed(config.seed, "uniform-rep", rep as u64);
            let summary = evaluate(
                test,
                |i, x: &X| {
                    let acquirable = x.num_parts() * (num_tiers - 1);
                    let bits = (fraction * acquirable as f64).round() as usize;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, "example", i as u64));
                    run_uniform(x, &full_model, sched, bits, &mut rng)
                },
                config.metric,
                sched,
            )?;
            acc += summary.mean_accuracy;
            feature += summary.mean_feature_cost;
            inference += summary.mean_inference_calls;
            policy_calls += summary.mean_policy_calls;
            total += summary.mean_total_cost;
        }
        let n = config.uniform_repeats as f64;
        outcome.points.push(CurvePoint {
            policy: "uniform".to_string(),
            control: fraction,
            accuracy: acc / n,
            feature_cost: feature / n,
            inference_calls: inference / n,
            policy_calls: policy_calls / n,
            total_cost: total / n,
        });
    }

    for &threshold in &config.myopic_thresholds {
        let summary = evaluate(
            test,
            |_, x| run_myopic(x, &full_model, sched, threshold),
            config.metric,
            sched,
        )?;
        outcome.points.push(CurvePoint::from_summary("myopic", threshold, &summary));
    }

    // Adaptive one-shot curve: one point per λ; failures recorded, not fatal.
    for &lambda in &config.lambdas {
        let result = (|| -> Result<(CurvePoint, f64)> {
            let loss_params = ModifiedLossParams::new(config.loss, lambda)?;
            let labels: Vec<PseudoLabel> = train
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    search_pseudo_label(
                        config.search,
                        config.tau,
                        x,
                        oof.predictor_for(i),
                        &loss_params,
                        sched,
                    )
                })
                .collect::<Result<_>>()?;
            let mean_cost = labels
                .iter()
                .map(|l| state_cost(&l.target, sched))
                .sum::<Result<f64>>()?
                / labels.len() as f64;
            let rows = build_oneshot_rows(train, &labels, Some(&oof.fold_of))?;
            let (policy, _) =
                train_oneshot(&rows, num_tiers, train[0].cheap_dim(), &config.oneshot)?;
            let summary = evaluate(
                test,
                |_, x| run_oneshot(x, &policy, &full_model, sched),
                config.metric,
                sched,
            )?;
            Ok((CurvePoint::from_summary("oneshot", lambda, &summary), mean_cost))
        })();
        match result {
            Ok((point, mean_cost)) => {
                outcome.points.push(point);
                outcome.pseudo_mean_costs.push((lambda, mean_cost));
            }
            Err(e) => outcome.errors.push(SweepError { control: lambda, message: e.to_string() }),
        }
    }

    outcome.points.sort_by(|a, b| {
        (a.policy.as_str(), a.control)
            .partial_cmp(&(b.policy.as_str(), b.control))
            .expect("controls are finite")
    });
    Ok(outcome)
}

/// Evaluates a trained anytime policy at each interrupt budget.
pub fn run_budget_sweep<X, P>(
    test: &[X],
    policy: &AnytimePolicy,
    predictor: &P,
    sched: &CostSchedule,
    budgets: &[f64],
    metric: Metric,
) -> Result<Vec<CurvePoint>>
where
    X: PolicyInstrumented + Sync,
    P: Predictor<Example = X> + Sync,
{
    if budgets.is_empty() {
        return Err(Error::EmptyInput("budget list"));
    }
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let summary = evaluate(
            test,
            |_, x| {
                let (prediction, trace) = run_anytime(x, policy, predictor, sched, budget)?;
                Ok((prediction, trace.final_ledger().clone()))
            },
            metric,
            sched,
        )?;
        points.push(CurvePoint::from_summary("anytime", budget, &summary));
    }
    Ok(points)
}

/// Seven-column curve CSV; one row per point, sorted by the caller.
pub fn write_sweep_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "policy,control,accuracy,feature_cost,inference_calls,policy_calls,total_cost")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.policy, p.control, p.accuracy, p.feature_cost, p.inference_calls, p.policy_calls,
            p.total_cost
        )?;
    }
    Ok(())
}

/// Linear interpolation of accuracy at a feature-cost level on a curve of
/// (cost, accuracy) points sorted by cost. `None` outside the curve's range.
pub fn accuracy_at_cost(curve: &[(f64, f64)], cost: f64) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let first = curve[0];
    if cost < first.0 {
        return None;
    }
    for window in curve.windows(2) {
        let (c0, a0) = window[0];
        let (c1, a1) = window[1];
        if cost <= c1 {
            if c1 == c0 {
                return Some(a0.max(a1));
            }
            let t = (cost - c0) / (c1 - c0);
            return Some(a0 + t * (a1 - a0));
        }
    }
    (cost <= curve.last().unwrap().0).then(|| curve.last().unwrap().1)
}

/// Counts matched cost levels where the first curve's interpolated accuracy
/// is at least the second's. Returns (wins, levels where both were defined).
pub fn dominance_count(
    adaptive: &[(f64, f64)],
    baseline: &[(f64, f64)],
    levels: &[f64],
) -> (usize, usize) {
    let mut wins = 0;
    let mut comparable = 0;
    for &level in levels {
        if let (Some(a), Some(b)) = (accuracy_at_cost(adaptive, level), accuracy_at_cost(baseline, level))
        {
            comparable += 1;
            if a >= b - 1e-12 {
                wins += 1;
            }
        }
    }
    (wins, comparable)
}

/// Convenience: a runner trace that predicts under a fixed state, used by
/// callers assembling custom anchor rows.
pub fn fixed_state_point<X, P>(
    name: &str,
    control: f64,
    test: &[X],
    predictor: &P,
    sched: &CostSchedule,
    state_of: impl Fn(usize) -> AcquisitionState + Sync,
    metric: Metric,
) -> Result<CurvePoint>
where
    X: BudgetedExample + Sync,
    P: Predictor<Example = X> + Sync,
{
    let summary = evaluate(
        test,
        |_, x| run_fixed_state(x, predictor, sched, &state_of(x.num_parts())),
        metric,
        sched,
    )?;
    Ok(CurvePoint::from_summary(name, control, &summary))
}

/// Per-example prediction rows for anchor comparisons; exposed for tests and
/// the command-line evaluator.
pub fn predictions_under_state<X, P>(
    test: &[X],
    predictor: &P,
    state_of: impl Fn(usize) -> AcquisitionState + Sync,
) -> Result<Vec<(StructuredLabel, CostLedger)>>
where
    X: BudgetedExample + Sync,
    P: Predictor<Example = X> + Sync,
{
    test.par_iter()
        .map(|x| {
            let state = state_of(x.num_parts());
            let pred = predictor.predict(x, &state)?;
            Ok((pred, CostLedger::zero()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{train_chain, ChainTrainParams};
    use crate::data::{gen_synthetic_chain, SyntheticChainConfig};

    fn corpus(n: usize, seed: u64) -> Vec<crate::chain::GlyphSequence> {
        gen_synthetic_chain(&SyntheticChainConfig {
            num_sequences: n,
            len_range: (3, 5),
            alphabet: 3,
            noise: 1.0,
            hard_fraction: 0.4,
            seed,
        })
        .unwrap()
    }

    fn quick_config() -> SweepConfig {
        let mut config = SweepConfig::synthetic_defaults(2);
        config.lambdas = vec![0.02, 0.4];
        config.n_folds = 2;
        config.uniform_fractions = vec![0.0, 0.5, 1.0];
        config.uniform_repeats = 2;
        config.myopic_thresholds = vec![0.1];
        config.oneshot.epochs = 15;
        config
    }

    fn run_quick(
        train: &[crate::chain::GlyphSequence],
        test: &[crate::chain::GlyphSequence],
        config: &SweepConfig,
    ) -> SweepOutcome {
        let params = ChainTrainParams { epochs: 8, ..ChainTrainParams::default() };
        run_sweep(
            train,
            test,
            |kept: &[usize]| {
                let subset: Vec<_> = kept.iter().map(|&i| train[i].clone()).collect();
                train_chain(&subset, 3, &params)
            },
            &CostSchedule::ocr(1.0),
            config,
        )
        .unwrap()
    }

    #[test]
    fn sweep_emits_every_requested_curve() {
        let train = corpus(24, 5);
        let test = corpus(12, 6);
        let outcome = run_quick(&train, &test, &quick_config());
        assert!(outcome.errors.is_empty(), "unexpected failures: {:?}", outcome.errors);
        let count = |name: &str| outcome.points.iter().filter(|p| p.policy == name).count();
        assert_eq!(count("anchor"), 2);
        assert_eq!(count("uniform"), 3);
        assert_eq!(count("myopic"), 1);
        assert_eq!(count("oneshot"), 2);
        for p in &outcome.points {
            assert!((0.0..=1.0).contains(&p.accuracy), "accuracy out of range: {p:?}");
            assert!(p.feature_cost >= 0.0 && p.total_cost >= 0.0);
        }
        // Sorted output: policy name then control value.
        for w in outcome.points.windows(2) {
            assert!(
                (w[0].policy.as_str(), w[0].control) <= (w[1].policy.as_str(), w[1].control)
            );
        }
    }

    #[test]
    fn pseudo_label_costs_fall_as_lambda_rises() {
        let train = corpus(24, 7);
        let test = corpus(8, 8);
        let mut config = quick_config();
        config.search = SearchKind::Exhaustive;
        config.lambdas = vec![0.01, 0.2, 2.0];
        let outcome = run_quick(&train, &test, &config);
        assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
        assert_eq!(outcome.pseudo_mean_costs.len(), 3);
        for w in outcome.pseudo_mean_costs.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-12,
                "mean pseudo-label cost rose with lambda: {:?}",
                outcome.pseudo_mean_costs
            );
        }
        // The largest lambda should squeeze acquisition to (near) nothing.
        assert!(outcome.pseudo_mean_costs[2].1 <= outcome.pseudo_mean_costs[0].1);
    }

    #[test]
    fn uniform_endpoints_equal_the_anchors() {
        let train = corpus(20, 9);
        let test = corpus(10, 10);
        let outcome = run_quick(&train, &test, &quick_config());
        let find = |name: &str, control: f64| {
            outcome
                .points
                .iter()
                .find(|p| p.policy == name && p.control == control)
                .unwrap_or_else(|| panic!("missing {name}@{control}"))
        };
        let zero_anchor = find("anchor", 0.0);
        let full_anchor = find("anchor", 1.0);
        let uniform_zero = find("uniform", 0.0);
        let uniform_full = find("uniform", 1.0);
        assert_eq!(uniform_zero.accuracy, zero_anchor.accuracy);
        assert_eq!(uniform_zero.feature_cost, zero_anchor.feature_cost);
        assert_eq!(uniform_full.accuracy, full_anchor.accuracy);
        assert_eq!(uniform_full.feature_cost, full_anchor.feature_cost);
    }

    #[test]
    fn sweep_reruns_are_byte_identical() {
        let train = corpus(18, 11);
        let test = corpus(9, 12);
        let config = quick_config();
        let a = run_quick(&train, &test, &config);
        let b = run_quick(&train, &test, &config);
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_sweep_csv(&a.points, &mut csv_a).unwrap();
        write_sweep_csv(&b.points, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        let text = String::from_utf8(csv_a).unwrap();
        assert!(text.starts_with(
            "policy,control,accuracy,feature_cost,inference_calls,policy_calls,total_cost\n"
        ));
        assert_eq!(text.lines().count(), a.points.len() + 1);
    }

    #[test]
    fn failed_lambdas_are_recorded_without_sinking_the_rest() {
        // Exhaustive search on an instance with more than 20 state bits must
        // fail; every lambda records an error, baselines still come through.
        let train = gen_synthetic_chain(&SyntheticChainConfig {
            num_sequences: 10,
            len_range: (11, 12),
            alphabet: 3,
            noise: 1.0,
            hard_fraction: 0.5,
            seed: 13,
        })
        .unwrap();
        let test = corpus(6, 14);
        let mut config = quick_config();
        config.search = SearchKind::Exhaustive;
        let outcome = run_quick(&train, &test, &config);
        assert_eq!(outcome.errors.len(), config.lambdas.len());
        assert!(outcome.errors[0].message.contains("state space"));
        assert!(outcome.points.iter().any(|p| p.policy == "anchor"));
        assert!(outcome.points.iter().all(|p| p.policy != "oneshot"));
    }

    #[test]
    fn interpolation_and_dominance_behave_on_hand_curves() {
        let curve = [(0.0, 0.5), (2.0, 0.7), (4.0, 0.9)];
        assert_eq!(accuracy_at_cost(&curve, 0.0), Some(0.5));
        assert_eq!(accuracy_at_cost(&curve, 1.0), Some(0.6));
        assert_eq!(accuracy_at_cost(&curve, 3.0), Some(0.8));
        assert_eq!(accuracy_at_cost(&curve, 4.0), Some(0.9));
        assert_eq!(accuracy_at_cost(&curve, 4.1), None);
        assert_eq!(accuracy_at_cost(&curve, -0.1), None);
        assert_eq!(accuracy_at_cost(&[], 1.0), None);

        let better = [(0.0, 0.6), (4.0, 0.9)];
        let (wins, comparable) = dominance_count(&better, &curve, &[0.0, 1.0, 3.0, 4.0, 9.0]);
        assert_eq!(comparable, 4);
        assert_eq!(wins, 4);
        let (wins, _) = dominance_count(&curve, &better, &[0.0, 4.0]);
        assert_eq!(wins, 1, "curves tie at cost 4 and differ at cost 0");
    }

    #[test]
    fn config_validation_rejects_malformed_sweeps() {
        let mut config = SweepConfig::synthetic_defaults(2);
        config.lambdas.clear();
        assert!(config.validate().is_err());
        let mut config = SweepConfig::synthetic_defaults(2);
        config.lambdas = vec![0.5, 0.1];
        assert!(config.validate().is_err());
        let mut config = SweepConfig::synthetic_defaults(2);
        config.uniform_fractions = vec![0.0, 1.5];
        assert!(config.validate().is_err());
        let mut config = SweepConfig::synthetic_defaults(2);
        config.n_folds = 1;
        assert!(config.validate().is_err());
        assert!(SweepConfig::synthetic_defaults(2).validate().is_ok());
    }
}
