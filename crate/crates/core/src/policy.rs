//! Acquisition policies: who decides which feature tiers to buy at test time.
//!
//! A policy never sees unacquired feature tiers. It reads only *cheap*
//! part-level descriptions — tier-0 content, position encodings, neighbor
//! summaries — plus, for the anytime variant, the current acquisition state.
//! Two learned policies are provided:
//!
//! * [`OneShotPolicy`]: per-(part, tier) binary scorers applied once before
//!   inference; trained on acquisition pseudo-labels with importance-weighted
//!   hinge loss ([`train_oneshot`]).
//! * [`AnytimePolicy`]: a scorer per acquisition step; each picks one bit to
//!   add to the current state; trained step by step while rolling the training
//!   set forward ([`train_anytime`]).
//!
//! Plus two baselines: [`uniform_policy`] (a random unset bit) and
//! [`myopic_policy`] (buy everything when cheap-feature confidence is low;
//! the margin-based confidence definitions live on the task predictors).
//!
//! Predictors used to score candidate states during policy training are
//! assigned out-of-fold by [`build_oof_predictions`]; scoring a state with the
//! predictor that was trained on the same example understates the structured
//! loss the policy will face on fresh data.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::PseudoLabel;
use crate::state::{
    acquirable_successors, modified_loss, AcquisitionState, BudgetedExample, CostSchedule,
    MarginPredictor, ModifiedLossParams, Predictor,
};
use crate::util::derive_seed;
use crate::{Error, Result};

/// Sparse feature vector: (index, value) pairs; indices need not be sorted
/// but must be unique and in range for the consuming weight vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec(pub Vec<(usize, f64)>);

impl SparseVec {
    pub fn push(&mut self, index: usize, value: f64) {
        self.0.push((index, value));
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| weights[i] * v).sum()
    }

    fn add_scaled_to(&self, weights: &mut [f64], scale: f64) {
        for &(i, v) in &self.0 {
            weights[i] += scale * v;
        }
    }

    fn max_index(&self) -> Option<usize> {
        self.0.iter().map(|&(i, _)| i).max()
    }
}

const LENGTH_BUCKETS: usize = 8;
const POS_BUCKETS: usize = 64;

fn length_bucket(parts: usize) -> usize {
    (parts.saturating_sub(1) / 4).min(LENGTH_BUCKETS - 1)
}

/// Examples that can describe each part using always-available information
/// only. Implementations must not read tier-1+ content: two examples that
/// agree on tier-0 content must produce identical features even if their
/// expensive tiers differ.
pub trait PolicyInstrumented: BudgetedExample {
    /// Dimension of [`Self::cheap_part_features`]; constant across examples
    /// of one dataset.
    fn cheap_dim(&self) -> usize;
    fn cheap_part_features(&self, part: usize) -> SparseVec;
}

impl PolicyInstrumented for crate::chain::GlyphSequence {
    fn cheap_dim(&self) -> usize {
        self.tier_dims()[0] + 1 + LENGTH_BUCKETS + 4
    }

    /// Layout: tier-0 vector of the part, relative position, length-bucket
    /// one-hot, then left/right neighbor densities and boundary indicators.
    fn cheap_part_features(&self, part: usize) -> SparseVec {
        let d0 = self.tier_dims()[0];
        let mut f = SparseVec::default();
        for (i, &v) in self.tier_features(part, 0).iter().enumerate() {
            if v != 0.0 {
                f.push(i, v);
            }
        }
        let len = self.len();
        let rel = if len > 1 { part as f64 / (len - 1) as f64 } else { 0.0 };
        f.push(d0, rel);
        f.push(d0 + 1 + length_bucket(len), 1.0);
        let base = d0 + 1 + LENGTH_BUCKETS;
        let density = |p: usize| {
            let v = self.tier_features(p, 0);
            v.iter().sum::<f64>() / v.len() as f64
        };
        if part > 0 {
            f.push(base, density(part - 1));
        } else {
            f.push(base + 2, 1.0); // first part
        }
        if part + 1 < len {
            f.push(base + 1, density(part + 1));
        } else {
            f.push(base + 3, 1.0); // last part
        }
        f
    }
}

impl PolicyInstrumented for crate::dep::Sentence {
    fn cheap_dim(&self) -> usize {
        3 * POS_BUCKETS + 1 + LENGTH_BUCKETS + 1
    }

    /// Layout: hashed one-hots for the word's POS and its two neighbors
    /// (sentinels at the edges), relative position, length-bucket one-hot,
    /// bias. Word forms are expensive-tier content and are never touched.
    fn cheap_part_features(&self, part: usize) -> SparseVec {
        let word = part as isize + 1; // parts index dependents 1..n
        let bucket = |p: isize| {
            (crate::util::Fnv::new().bytes(self.pos_at(p).as_bytes()).finish() % POS_BUCKETS as u64)
                as usize
        };
        let mut f = SparseVec::default();
        f.push(bucket(word), 1.0);
        f.push(POS_BUCKETS + bucket(word - 1), 1.0);
        f.push(2 * POS_BUCKETS + bucket(word + 1), 1.0);
        let n = self.len();
        let rel = if n > 1 { part as f64 / (n - 1) as f64 } else { 0.0 };
        f.push(3 * POS_BUCKETS, rel);
        f.push(3 * POS_BUCKETS + 1 + length_bucket(n), 1.0);
        f.push(3 * POS_BUCKETS + 1 + LENGTH_BUCKETS, 1.0);
        f
    }
}

// ---------------------------------------------------------------------------
// Out-of-fold predictor assignment
// ---------------------------------------------------------------------------

/// Which fold each example belongs to, and one predictor per fold trained on
/// everything *outside* that fold.
#[derive(Debug)]
pub struct OofAssignment<P> {
    pub fold_of: Vec<usize>,
    pub predictors: Vec<P>,
}

impl<P> OofAssignment<P> {
    pub fn predictor_for(&self, example: usize) -> &P {
        &self.predictors[self.fold_of[example]]
    }
}

/// Assigns examples to `n_folds` folds (seeded shuffle, round-robin) and
/// calls `train_fn` once per fold with the indices of the examples it may
/// train on — every example except that fold's.
pub fn build_oof_predictions<P>(
    n_examples: usize,
    n_folds: usize,
    seed: u64,
    mut train_fn: impl FnMut(&[usize]) -> Result<P>,
) -> Result<OofAssignment<P>> {
    if n_folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_examples < n_folds {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n_examples} examples into {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "oof-folds", 0)));
    let mut fold_of = vec![0usize; n_examples];
    for (rank, &idx) in order.iter().enumerate() {
        fold_of[idx] = rank % n_folds;
    }
    let mut predictors = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let kept: Vec<usize> = (0..n_examples).filter(|&i| fold_of[i] != fold).collect();
        predictors.push(train_fn(&kept)?);
    }
    Ok(OofAssignment { fold_of, predictors })
}

// ---------------------------------------------------------------------------
// One-shot policy
// ---------------------------------------------------------------------------

/// One training row of the per-(part, tier) binary reduction: should this
/// bit be on in the example's acquisition pseudo-label?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub example: usize,
    pub part: usize,
    pub tier: usize,
    pub features: SparseVec,
    pub target_on: bool,
    pub weight: f64,
    pub fold: usize,
}

/// Decomposes pseudo-labels into [`PolicyRow`]s: one row per (example, part,
/// acquirable tier), carrying the example's importance weight.
pub fn build_oneshot_rows<X: PolicyInstrumented>(
    data: &[X],
    labels: &[PseudoLabel],
    fold_of: Option<&[usize]>,
) -> Result<Vec<PolicyRow>> {
    if data.is_empty() {
        return Err(Error::EmptyInput("one-shot training data"));
    }
    if data.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} examples but {} pseudo-labels",
            data.len(),
            labels.len()
        )));
    }
    let mut rows = Vec::new();
    for (i, (x, label)) in data.iter().zip(labels).enumerate() {
        if label.weight < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative importance weight {} on example {i}",
                label.weight
            )));
        }
        let tiers = label.target.num_tiers();
        for part in 0..x.num_parts() {
            let features = x.cheap_part_features(part);
            for tier in 1..tiers {
                rows.push(PolicyRow {
                    example: i,
                    part,
                    tier,
                    features: features.clone(),
                    target_on: label.target.get(tier, part),
                    weight: label.weight,
                    fold: fold_of.map_or(0, |f| f[i]),
                });
            }
        }
    }
    Ok(rows)
}

/// Writes rows as JSON-lines for inspection or out-of-process training.
pub fn dump_rows_jsonl<W: Write>(rows: &[PolicyRow], mut out: W) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rows_jsonl<R: BufRead>(input: R) -> Result<Vec<PolicyRow>> {
    let mut rows = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneShotParams {
    pub epochs: usize,
    /// L2 regularization strength; the step size at visit `t` (counted from
    /// 0) is `1 / (reg * (t + t0))`, so scaling all row weights and `reg` by
    /// the same power of two reproduces the identical weight iterates.
    pub reg: f64,
    pub t0: f64,
    pub seed: u64,
    /// Multiplies the positive-class weight of rows for tier `k` (index
    /// `k - 1`); the knob that reaches low-budget operating points when the
    /// loss-vs-cost trade-off alone cannot.
    pub class_weights: Vec<f64>,
    /// When false, every surviving row trains with weight 1 instead of its
    /// importance weight (ablation switch).
    pub use_importance_weights: bool,
}

impl OneShotParams {
    pub fn new(num_tiers: usize) -> Self {
        OneShotParams {
            epochs: 30,
            reg: 1e-3,
            t0: 1.0,
            seed: 1,
            class_weights: vec![1.0; num_tiers.saturating_sub(1)],
            use_importance_weights: true,
        }
    }

    fn validate(&self, num_tiers: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("one-shot epochs must be >= 1".into()));
        }
        if !(self.reg.is_finite() && self.reg > 0.0) {
            return Err(Error::InvalidParameter(format!("reg must be positive, got {}", self.reg)));
        }
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(Error::InvalidParameter(format!("t0 must be positive, got {}", self.t0)));
        }
        if self.class_weights.len() != num_tiers - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} class weights for {} acquirable tiers",
                self.class_weights.len(),
                num_tiers - 1
            )));
        }
        if self.class_weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidParameter("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Per-tier linear scorers over cheap part features. `decide` turns on bit
/// (k, c) iff the tier-k scorer is positive on part c's features; parts and
/// tiers are decided independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneShotPolicy {
    pub feature_dim: usize,
    pub num_tiers: usize,
    /// `weights[k - 1]` scores tier `k`; tier 0 is never a decision.
    pub weights: Vec<Vec<f64>>,
    /// True when training saw no usable (positive-weight) rows and returned
    /// the all-zero scorer.
    pub degenerate: bool,
}

impl OneShotPolicy {
    pub fn zero(feature_dim: usize, num_tiers: usize) -> Self {
        OneShotPolicy {
            feature_dim,
            num_tiers,
            weights: vec![vec![0.0; feature_dim]; num_tiers - 1],
            degenerate: false,
        }
    }

    pub fn score(&self, features: &SparseVec, tier: usize) -> f64 {
        features.dot(&self.weights[tier - 1])
    }

    pub fn decide<X: PolicyInstrumented>(&self, x: &X) -> AcquisitionState {
        let mut state = AcquisitionState::zero(self.num_tiers, x.num_parts());
        for part in 0..x.num_parts() {
            let features = x.cheap_part_features(part);
            for tier in 1..self.num_tiers {
                if self.score(&features, tier) > 0.0 {
                    state.set(tier, part, true);
                }
            }
        }
        state
    }
}

#[derive(Clone, Debug, Default)]
pub struct OneShotReport {
    pub rows_used: usize,
    pub rows_skipped: usize,
    pub degenerate: bool,
}

/// One Pegasos-style pass: decay-and-step subgradient descent on the weighted
/// hinge objective `reg/2 ||w||^2 + sum_i a_i max(0, 1 - y_i w.phi_i)`.
/// Zero-weight rows are filtered before shuffling, so dropping them from the
/// input reproduces the identical iterate sequence.
fn pegasos_binary(
    rows: &[(&SparseVec, f64, f64)], // (features, y in {-1,+1}, a > 0)
    dim: usize,
    epochs: usize,
    reg: f64,
    t0: f64,
    seed: u64,
) -> Vec<f64> {
    let mut w = vec![0.0; dim];
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0f64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &r in &order {
            let (phi, y, a) = rows[r];
            let eta = 1.0 / (reg * (t + t0));
            let margin = y * phi.dot(&w);
            let decay = 1.0 - eta * reg;
            for v in w.iter_mut() {
                *v *= decay;
            }
            if margin < 1.0 {
                phi.add_scaled_to(&mut w, eta * a * y);
            }
            t += 1.0;
        }
    }
    w
}

/// Trains the per-tier binary scorers on pseudo-label rows. Positive rows
/// (bit on in the pseudo-label) carry `weight * class_weights[tier - 1]`,
/// negative rows carry `weight`; rows whose effective weight is zero are
/// dropped up front. All rows zero-weight -> degenerate zero policy plus a
/// warning in the report.
pub fn train_oneshot(
    rows: &[PolicyRow],
    num_tiers: usize,
    feature_dim: usize,
    params: &OneShotParams,
) -> Result<(OneShotPolicy, OneShotReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("one-shot training rows"));
    }
    if num_tiers < 2 {
        return Err(Error::InvalidParameter("need at least one acquirable tier".into()));
    }
    params.validate(num_tiers)?;
    for row in rows {
        if row.tier == 0 || row.tier >= num_tiers {
            return Err(Error::InvalidParameter(format!(
                "row for tier {} outside acquirable range 1..{num_tiers}",
                row.tier
            )));
        }
        if !(row.weight.is_finite() && row.weight >= 0.0) {
            return Err(Error::InvalidParameter(format!("bad row weight {}", row.weight)));
        }
        if row.features.max_index().is_some_and(|i| i >= feature_dim) {
            return Err(Error::DimensionMismatch(format!(
                "feature index beyond dim {feature_dim}"
            )));
        }
    }
    let mut policy = OneShotPolicy::zero(feature_dim, num_tiers);
    let mut report = OneShotReport::default();
    for tier in 1..num_tiers {
        let weighted: Vec<(&SparseVec, f64, f64)> = rows
            .iter()
            .filter(|r| r.tier == tier)
            .filter_map(|r| {
                let base = if params.use_importance_weights { r.weight } else { 1.0 };
                let a = if r.target_on { base * params.class_weights[tier - 1] } else { base };
                let y = if r.target_on { 1.0 } else { -1.0 };
                (a > 0.0).then_some((&r.features, y, a))
            })
            .collect();
        report.rows_used += weighted.len();
        if weighted.is_empty() {
            continue;
        }
        policy.weights[tier - 1] = pegasos_binary(
            &weighted,
            feature_dim,
            params.epochs,
            params.reg,
            params.t0,
            derive_seed(params.seed, "oneshot-tier", tier as u64),
        );
    }
    report.rows_skipped = rows.len() - report.rows_used;
    if report.rows_used == 0 {
        report.degenerate = true;
        policy.degenerate = true;
    }
    report.degenerate = policy.degenerate;
    Ok((policy, report))
}

// ---------------------------------------------------------------------------
// Anytime policy
// ---------------------------------------------------------------------------

/// One scorer per acquisition step. Step `t`'s scorer ranks the current
/// state's acquirable successors; `choose` returns the argmax (ties toward
/// the lowest flat bit index). Steps beyond the trained horizon reuse the
/// last scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnytimePolicy {
    pub cheap_dim: usize,
    pub num_tiers: usize,
    /// `steps[t][k - 1]` scores tier-k additions at step t; dimension
    /// [`Self::action_dim`].
    pub steps: Vec<Vec<Vec<f64>>>,
}

impl AnytimePolicy {
    /// Cheap part features plus per-tier bits of the candidate part and
    /// per-tier acquired fractions of the current state.
    pub fn action_dim(&self) -> usize {
        self.cheap_dim + 2 * self.num_tiers
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    fn zero_step(cheap_dim: usize, num_tiers: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; cheap_dim + 2 * num_tiers]; num_tiers - 1]
    }

    pub fn action_features<X: PolicyInstrumented>(
        &self,
        x: &X,
        state: &AcquisitionState,
        part: usize,
    ) -> SparseVec {
        let mut f = x.cheap_part_features(part);
        let base = self.cheap_dim;
        for k in 0..self.num_tiers {
            if state.get(k, part) {
                f.push(base + k, 1.0);
            }
        }
        let parts = state.num_parts() as f64;
        for k in 0..self.num_tiers {
            let acquired = (0..state.num_parts()).filter(|&c| state.get(k, c)).count();
            f.push(base + self.num_tiers + k, acquired as f64 / parts);
        }
        f
    }

    /// The bit addition step `t`'s scorer prefers. Errors when every
    /// acquirable bit is already set.
    pub fn choose<X: PolicyInstrumented>(
        &self,
        x: &X,
        state: &AcquisitionState,
        step: usize,
    ) -> Result<((usize, usize), AcquisitionState)> {
        if self.steps.is_empty() {
            return Err(Error::InvalidParameter("anytime policy has no trained steps".into()));
        }
        let scorer = &self.steps[step.min(self.steps.len() - 1)];
        let mut best: Option<(f64, (usize, usize), AcquisitionState)> = None;
        for ((k, c), succ) in acquirable_successors(state) {
            let score = self.action_features(x, state, c).dot(&scorer[k - 1]);
            // Successors arrive in flat bit order; strict > keeps the first.
            if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                best = Some((score, (k, c), succ));
            }
        }
        best.map(|(_, action, succ)| (action, succ))
            .ok_or(Error::InvalidParameter("no acquirable successors: state is full".into()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnytimeParams {
    pub epochs_per_step: usize,
    pub reg: f64,
    pub t0: f64,
    pub seed: u64,
}

impl Default for AnytimeParams {
    fn default() -> Self {
        AnytimeParams { epochs_per_step: 20, reg: 1e-3, t0: 1.0, seed: 1 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AnytimeReport {
    /// How many examples were still acquiring at each trained step.
    pub step_live_counts: Vec<usize>,
    /// Per-example state trajectories walked during training (zero state
    /// first, one bit added per step until full-acquirable).
    pub trajectories: Vec<Vec<AcquisitionState>>,
}

/// Trains one scorer per step by rolling every training example forward:
/// at step t, each live example's acquirable successors are scored by the
/// example's out-of-fold predictor, the scorer is fit to prefer low-loss
/// successors (margin rescaled by the successor's regret), and each example
/// advances by the freshly trained scorer's choice. Examples with every
/// acquirable bit set drop out; examples whose successors all tie contribute
/// nothing to the fit but still advance.
pub fn train_anytime<X, P>(
    data: &[X],
    oof: &OofAssignment<P>,
    loss_params: &ModifiedLossParams,
    sched: &CostSchedule,
    params: &AnytimeParams,
) -> Result<(AnytimePolicy, AnytimeReport)>
where
    X: PolicyInstrumented,
    P: Predictor<Example = X>,
{
    if data.is_empty() {
        return Err(Error::EmptyInput("anytime training data"));
    }
    if oof.fold_of.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} fold assignments for {} examples",
            oof.fold_of.len(),
            data.len()
        )));
    }
    if params.epochs_per_step == 0 || !(params.reg > 0.0) || !(params.t0 > 0.0) {
        return Err(Error::InvalidParameter("anytime params must be positive".into()));
    }
    let num_tiers = oof.predictors[0].num_tiers();
    if num_tiers < 2 {
        return Err(Error::InvalidParameter("need at least one acquirable tier".into()));
    }
    let cheap_dim = data[0].cheap_dim();
    if data.iter().any(|x| x.cheap_dim() != cheap_dim) {
        return Err(Error::DimensionMismatch("cheap feature dims differ across examples".into()));
    }
    let mut policy = AnytimePolicy { cheap_dim, num_tiers, steps: Vec::new() };
    let mut states: Vec<AcquisitionState> =
        data.iter().map(|x| AcquisitionState::zero(num_tiers, x.num_parts())).collect();
    let mut report = AnytimeReport {
        step_live_counts: Vec::new(),
        trajectories: states.iter().map(|s| vec![s.clone()]).collect(),
    };
    let max_steps = data.iter().map(|x| x.num_parts()).max().unwrap() * (num_tiers - 1);
    let action_dim = cheap_dim + 2 * num_tiers;

    for step in 0..max_steps {
        let live: Vec<usize> =
            (0..data.len()).filter(|&i| !states[i].is_full_acquirable()).collect();
        if live.is_empty() {
            break;
        }
        report.step_live_counts.push(live.len());

        // Candidate features and regrets, fixed for the whole step.
        struct StepExample {
            feats: Vec<(usize, SparseVec)>, // (tier, action features)
            regrets: Vec<f64>,
            best: usize,
        }
        let mut fits: Vec<StepExample> = Vec::new();
        for &i in &live {
            let predictor = oof.predictor_for(i);
            let mut feats = Vec::new();
            let mut losses = Vec::new();
            for ((k, c), succ) in acquirable_successors(&states[i]) {
                feats.push((k, policy.action_features(&data[i], &states[i], c)));
                losses.push(modified_loss(
                    &data[i],
                    data[i].gold(),
                    &succ,
                    predictor,
                    loss_params,
                    sched,
                )?);
            }
            let mut best = 0;
            for (j, &c) in losses.iter().enumerate() {
                if c < losses[best] {
                    best = j;
                }
            }
            let min = losses[best];
            let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                let regrets = losses.iter().map(|&c| c - min).collect();
                fits.push(StepExample { feats, regrets, best });
            }
        }

        // Margin-rescaled multiclass hinge over the candidates.
        let mut scorer = AnytimePolicy::zero_step(cheap_dim, num_tiers);
        if !fits.is_empty() {
            let mut order: Vec<usize> = (0..fits.len()).collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "anytime-step", step as u64));
            let mut t = 0.0f64;
            for _ in 0..params.epochs_per_step {
                order.shuffle(&mut rng);
                for &e in &order {
                    let ex = &fits[e];
                    let eta = 1.0 / (params.reg * (t + params.t0));
                    let mut augmented = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for (j, (k, phi)) in ex.feats.iter().enumerate() {
                        let s = phi.dot(&scorer[k - 1]) + ex.regrets[j];
                        if s > augmented {
                            augmented = s;
                            arg = j;
                        }
                    }
                    let (bk, bphi) = &ex.feats[ex.best];
                    let loss = augmented - bphi.dot(&scorer[bk - 1]);
                    let decay = 1.0 - eta * params.reg;
                    for block in scorer.iter_mut() {
                        for v in block.iter_mut() {
                            *v *= decay;
                        }
                    }
                    if loss > 0.0 && arg != ex.best {
                        bphi.add_scaled_to(&mut scorer[bk - 1], eta);
                        let (ak, aphi) = &ex.feats[arg];
                        aphi.add_scaled_to(&mut scorer[ak - 1], -eta);
                    }
                    t += 1.0;
                }
            }
        }
        debug_assert!(scorer.iter().all(|b| b.len() == action_dim));
        policy.steps.push(scorer);

        // Everyone still live advances by the freshly trained scorer.
        for &i in &live {
            let (_, next) = policy.choose(&data[i], &states[i], step)?;
            states[i] = next;
            report.trajectories[i].push(states[i].clone());
        }
    }
    Ok((policy, report))
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Adds one uniformly random unset acquirable bit. Errors when every
/// acquirable bit is already set.
pub fn uniform_policy<R: Rng>(state: &AcquisitionState, rng: &mut R) -> Result<AcquisitionState> {
    let unset = state.unset_acquirable_bits();
    if unset.is_empty() {
        return Err(Error::InvalidParameter(
            "uniform policy has no action: every acquirable bit is set".into(),
        ));
    }
    let (k, c) = unset[rng.gen_range(0..unset.len())];
    Ok(state.with_bit(k, c))
}

/// All-or-nothing confidence gate: decode once on cheap features; if the
/// predictor's normalized margin falls below `threshold`, buy every
/// acquirable bit, otherwise keep none. The caller owes one extra inference
/// when the gate fires (the low-confidence example is decoded twice).
pub fn myopic_policy<P: MarginPredictor>(
    x: &P::Example,
    predictor: &P,
    threshold: f64,
) -> Result<AcquisitionState> {
    use crate::state::BudgetedExample;
    let tiers = predictor.num_tiers();
    let zero = AcquisitionState::zero(tiers, x.num_parts());
    let confidence = predictor.confidence(x, &zero)?;
    Ok(if confidence < threshold {
        AcquisitionState::full_acquirable(tiers, x.num_parts())
    } else {
        zero
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const ONESHOT_FORMAT: &str = "budgetsp-oneshot-policy";
const ANYTIME_FORMAT: &str = "budgetsp-anytime-policy";
const POLICY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyEnvelope<T> {
    format: String,
    version: u32,
    policy: T,
}

fn to_envelope_json<T: Serialize>(format: &str, policy: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&PolicyEnvelope {
        format: format.to_string(),
        version: POLICY_VERSION,
        policy,
    })?)
}

fn from_envelope_json<T: for<'de> Deserialize<'de>>(format: &str, s: &str) -> Result<T> {
    let env: PolicyEnvelope<T> = serde_json::from_str(s)?;
    if env.format != format {
        return Err(Error::InvalidParameter(format!(
            "expected a {format} file, found {}",
            env.format
        )));
    }
    if env.version != POLICY_VERSION {
        return Err(Error::InvalidParameter(format!(
            "unsupported {format} version {}",
            env.version
        )));
    }
    Ok(env.policy)
}

impl OneShotPolicy {
    pub fn to_json(&self) -> Result<String> {
        to_envelope_json(ONESHOT_FORMAT, self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        from_envelope_json(ONESHOT_FORMAT, s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl AnytimePolicy {
    pub fn to_json(&self) -> Result<String> {
        to_envelope_json(ANYTIME_FORMAT, self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        from_envelope_json(ANYTIME_FORMAT, s)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
