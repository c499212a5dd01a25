//! Acquisition states, cost schedules, and the modified loss.
//!
//! An [`AcquisitionState`] is a binary `K x |C|` matrix: entry `(k, c)` says
//! whether feature tier `k` has been bought for part `c` of the input. Tier 0
//! is the cheap tier every prediction may use implicitly — the all-zero state
//! is the starting point of every episode and already supports a (cheap)
//! prediction. Scoring follows the cumulative rule: a part whose highest set
//! tier is `k` is scored with the union of tiers `0..=k`.
//!
//! Search over states (the [`crate::oracle`] module) works on the full bit
//! matrix. Acquisition *policies* act only on tiers `k >= 1` — flipping a
//! tier-0 bit never changes a prediction, so it is not a useful action — and
//! use [`acquirable_successors`] instead of [`feasible_successors`].

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One structured output: a label id per part. For chains the ids are letters,
/// for dependency trees the id of part `c` is the head of word `c + 1`
/// (0 = artificial root).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StructuredLabel(pub Vec<usize>);

impl StructuredLabel {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Binary tier-acquisition matrix for one example.
///
/// Bits are stored tier-major: the flat index of `(tier, part)` is
/// `tier * num_parts + part`. Whenever an order over bits matters (trajectory
/// tie-breaks, the lexicographic part of the exhaustive-search tie-break) it
/// is the order of this flat index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AcquisitionState {
    num_tiers: usize,
    num_parts: usize,
    bits: Vec<bool>,
}

impl AcquisitionState {
    /// The all-zero state: every part is scored with tier 0 only.
    pub fn zero(num_tiers: usize, num_parts: usize) -> Self {
        assert!(num_tiers >= 1 && num_parts >= 1, "state dimensions must be >= 1");
        AcquisitionState { num_tiers, num_parts, bits: vec![false; num_tiers * num_parts] }
    }

    /// The all-one state: every bit of every tier set.
    pub fn full(num_tiers: usize, num_parts: usize) -> Self {
        let mut s = Self::zero(num_tiers, num_parts);
        s.bits.iter_mut().for_each(|b| *b = true);
        s
    }

    /// The state a non-adaptive "buy everything" policy produces: all bits of
    /// tiers `k >= 1` set, tier-0 row left implicit.
    pub fn full_acquirable(num_tiers: usize, num_parts: usize) -> Self {
        let mut s = Self::zero(num_tiers, num_parts);
        for k in 1..num_tiers {
            for c in 0..num_parts {
                s.set(k, c, true);
            }
        }
        s
    }

    pub fn num_tiers(&self) -> usize {
        self.num_tiers
    }

    pub fn num_parts(&self) -> usize {
        self.num_parts
    }

    pub fn get(&self, tier: usize, part: usize) -> bool {
        self.bits[self.index(tier, part)]
    }

    pub fn set(&mut self, tier: usize, part: usize, value: bool) {
        let i = self.index(tier, part);
        self.bits[i] = value;
    }

    fn index(&self, tier: usize, part: usize) -> usize {
        assert!(tier < self.num_tiers && part < self.num_parts, "bit index out of range");
        tier * self.num_parts + part
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// True when every tier `k >= 1` bit is set (the policy action space is
    /// exhausted; the tier-0 row does not matter for this).
    pub fn is_full_acquirable(&self) -> bool {
        (1..self.num_tiers).all(|k| (0..self.num_parts).all(|c| self.get(k, c)))
    }

    /// Highest set tier for `part`, or 0 when none is set. Under the
    /// cumulative rule this is the tier whose feature union scores the part.
    pub fn active_tier(&self, part: usize) -> usize {
        (1..self.num_tiers).rev().find(|&k| self.get(k, part)).unwrap_or(0)
    }

    /// Flat indices `(tier, part)` of all unset bits.
    pub fn unset_bits(&self) -> Vec<(usize, usize)> {
        self.iter_unset(0)
    }

    /// Unset bits restricted to tiers `>= min_tier`.
    fn iter_unset(&self, min_tier: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in min_tier..self.num_tiers {
            for c in 0..self.num_parts {
                if !self.get(k, c) {
                    out.push((k, c));
                }
            }
        }
        out
    }

    /// Unset bits a policy may acquire (tiers `k >= 1`).
    pub fn unset_acquirable_bits(&self) -> Vec<(usize, usize)> {
        self.iter_unset(1)
    }

    /// Returns a copy with one extra bit set. Panics if the bit is already set
    /// (monotonicity of acquisition episodes is a hard invariant).
    pub fn with_bit(&self, tier: usize, part: usize) -> Self {
        assert!(!self.get(tier, part), "bit ({tier}, {part}) is already acquired");
        let mut s = self.clone();
        s.set(tier, part, true);
        s
    }

    /// True if `self` sets every bit that `other` sets.
    pub fn is_superset_of(&self, other: &AcquisitionState) -> bool {
        self.num_tiers == other.num_tiers
            && self.num_parts == other.num_parts
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    /// Bitwise OR of two states over the same dimensions.
    pub fn union(&self, other: &AcquisitionState) -> Result<AcquisitionState> {
        if self.num_tiers != other.num_tiers || self.num_parts != other.num_parts {
            return Err(Error::DimensionMismatch(format!(
                "state union: {}x{} vs {}x{}",
                self.num_tiers, self.num_parts, other.num_tiers, other.num_parts
            )));
        }
        let mut s = self.clone();
        for (a, &b) in s.bits.iter_mut().zip(&other.bits) {
            *a = *a || b;
        }
        Ok(s)
    }

    /// Tier rows as '0'/'1' strings joined by '|', e.g. `"010|110"`.
    /// This is the representation used in JSON artifacts.
    pub fn to_bitmap(&self) -> String {
        let mut s = String::with_capacity(self.bits.len() + self.num_tiers);
        for k in 0..self.num_tiers {
            if k > 0 {
                s.push('|');
            }
            for c in 0..self.num_parts {
                s.push(if self.get(k, c) { '1' } else { '0' });
            }
        }
        s
    }

    pub fn from_bitmap(bitmap: &str) -> Result<Self> {
        let rows: Vec<&str> = bitmap.split('|').collect();
        let parts = rows[0].len();
        if parts == 0 {
            return Err(Error::InvalidParameter("empty state bitmap".into()));
        }
        let mut s = AcquisitionState::zero(rows.len(), parts);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != parts {
                return Err(Error::InvalidParameter(format!(
                    "ragged state bitmap: row {k} has {} bits, expected {parts}",
                    row.len()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => s.set(k, c, true),
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "invalid bitmap character {ch:?}"
                        )))
                    }
                }
            }
        }
        Ok(s)
    }
}

impl Serialize for AcquisitionState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bitmap())
    }
}

impl<'de> Deserialize<'de> for AcquisitionState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AcquisitionState::from_bitmap(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-tier acquisition prices plus the per-call prices of inference and
/// policy evaluation. All in abstract nonnegative units; only ratios and the
/// chosen budget scale give them meaning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    /// `tier_costs[k]` is charged for every set bit `(k, c)`. Tier 0 is the
    /// cheap tier and may well cost 0.
    pub tier_costs: Vec<f64>,
    pub inference_cost: f64,
    pub policy_cost: f64,
}

impl CostSchedule {
    pub fn new(tier_costs: Vec<f64>, inference_cost: f64, policy_cost: f64) -> Result<Self> {
        let sched = CostSchedule { tier_costs, inference_cost, policy_cost };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tier_costs.is_empty() {
            return Err(Error::EmptyInput("cost schedule has no tiers"));
        }
        let all = self.tier_costs.iter().chain([&self.inference_cost, &self.policy_cost]);
        for &v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("costs must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn num_tiers(&self) -> usize {
        self.tier_costs.len()
    }

    /// Largest single-bit price; bounds how far a budgeted run can overshoot.
    pub fn max_tier_cost(&self) -> f64 {
        self.tier_costs.iter().cloned().fold(0.0, f64::max)
    }

    /// Cost of buying every tier `k >= 1` for every one of `num_parts` parts —
    /// the denominator used when reporting cost fractions.
    pub fn full_acquirable_cost(&self, num_parts: usize) -> f64 {
        self.tier_costs.iter().skip(1).sum::<f64>() * num_parts as f64
    }

    /// Measured per-word extraction/inference prices of a two-tier dependency
    /// parser: 165 units for the POS tier, 110 more for the full lexicalized
    /// tier, 75 per decoding call.
    pub fn paper_parse() -> Self {
        CostSchedule { tier_costs: vec![165.0, 110.0], inference_cost: 75.0, policy_cost: 0.0 }
    }

    /// OCR preset: raw pixels are free, the HOG tier costs `hog_cost` per glyph.
    pub fn ocr(hog_cost: f64) -> Self {
        CostSchedule { tier_costs: vec![0.0, hog_cost], inference_cost: 0.0, policy_cost: 0.0 }
    }
}

/// Which loss `L` the modified loss is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Number of mismatched parts.
    Hamming,
    /// 0 iff the whole structure matches, else 1.
    Indicator,
}

/// Parameters of the modified loss `L(F(X,S), Y) + lambda * c(S)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModifiedLossParams {
    pub loss: LossKind,
    /// Trade-off multiplier on the feature cost; must be finite and >= 0.
    pub lambda: f64,
}

impl ModifiedLossParams {
    pub fn new(loss: LossKind, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(ModifiedLossParams { loss, lambda })
    }
}

/// Distribution over acquisition states used when training predictors that
/// must stay calibrated across the whole state space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSampler {
    /// Every bit set independently with probability `p`.
    Bernoulli { p: f64 },
}

impl Default for StateSampler {
    fn default() -> Self {
        StateSampler::Bernoulli { p: 0.5 }
    }
}

impl StateSampler {
    pub fn validate(&self) -> Result<()> {
        match self {
            StateSampler::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidParameter(format!(
                        "state sampler probability must be in [0, 1], got {p}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R, num_tiers: usize, num_parts: usize) -> AcquisitionState {
        match self {
            StateSampler::Bernoulli { p } => {
                let mut s = AcquisitionState::zero(num_tiers, num_parts);
                for k in 0..num_tiers {
                    for c in 0..num_parts {
                        if rng.gen_bool(*p) {
                            s.set(k, c, true);
                        }
                    }
                }
                s
            }
        }
    }
}

/// Anything that turns an input and an acquisition state into a structured
/// prediction. Implementations must be deterministic: same input and state,
/// same output.
pub trait Predictor {
    type Example: BudgetedExample;

    fn num_tiers(&self) -> usize;

    fn predict(&self, x: &Self::Example, state: &AcquisitionState) -> Result<StructuredLabel>;
}

/// An example with a known part count and gold structure.
pub trait BudgetedExample {
    fn num_parts(&self) -> usize;

    fn gold(&self) -> &StructuredLabel;
}

/// Predictors that can also report how confident the decode at a state is;
/// used by the myopic all-or-nothing baseline.
pub trait MarginPredictor: Predictor {
    /// A margin-style confidence of the decode at `state` (higher = more
    /// certain). The exact definition is per-task; see the implementations.
    fn confidence(&self, x: &Self::Example, state: &AcquisitionState) -> Result<f64>;
}

/// Feature cost `c(S)`: the sum of `tier_costs[k]` over all set bits `(k, c)`.
pub fn state_cost(state: &AcquisitionState, sched: &CostSchedule) -> Result<f64> {
    if sched.num_tiers() != state.num_tiers() {
        return Err(Error::DimensionMismatch(format!(
            "cost schedule has {} tiers, state has {}",
            sched.num_tiers(),
            state.num_tiers()
        )));
    }
    let mut total = 0.0;
    for k in 0..state.num_tiers() {
        for c in 0..state.num_parts() {
            if state.get(k, c) {
                total += sched.tier_costs[k];
            }
        }
    }
    Ok(total)
}

/// Number of mismatched parts between two equal-length labelings.
pub fn hamming_loss(a: &StructuredLabel, b: &StructuredLabel) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "hamming loss over labels of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count() as f64)
}

/// 0 iff the two labelings are identical, else 1.
pub fn indicator_loss(a: &StructuredLabel, b: &StructuredLabel) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "indicator loss over labels of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(if a.0 == b.0 { 0.0 } else { 1.0 })
}

pub fn structured_loss(kind: LossKind, a: &StructuredLabel, b: &StructuredLabel) -> Result<f64> {
    match kind {
        LossKind::Hamming => hamming_loss(a, b),
        LossKind::Indicator => indicator_loss(a, b),
    }
}

/// The modified loss `L(F(X, S), Y) + lambda * c(S)`: prediction error at the
/// state plus the priced feature bill of the state.
pub fn modified_loss<P: Predictor>(
    x: &P::Example,
    gold: &StructuredLabel,
    state: &AcquisitionState,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
) -> Result<f64> {
    let predicted = predictor.predict(x, state)?;
    let loss = structured_loss(params.loss, &predicted, gold)?;
    Ok(loss + params.lambda * state_cost(state, sched)?)
}

/// Number of bits on which two states over the same dimensions differ.
pub fn state_hamming_distance(a: &AcquisitionState, b: &AcquisitionState) -> Result<usize> {
    if a.num_tiers() != b.num_tiers() || a.num_parts() != b.num_parts() {
        return Err(Error::DimensionMismatch(format!(
            "state distance: {}x{} vs {}x{}",
            a.num_tiers(),
            a.num_parts(),
            b.num_tiers(),
            b.num_parts()
        )));
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count())
}

/// All states reachable by setting exactly one currently-unset bit (any tier).
/// Empty iff the state is all-one.
pub fn feasible_successors(state: &AcquisitionState) -> Vec<AcquisitionState> {
    state.unset_bits().into_iter().map(|(k, c)| state.with_bit(k, c)).collect()
}

/// Successors a policy may pick: one-bit additions restricted to tiers
/// `k >= 1`, returned with the bit they add. Empty iff every acquirable bit
/// is already set.
pub fn acquirable_successors(state: &AcquisitionState) -> Vec<((usize, usize), AcquisitionState)> {
    state
        .unset_acquirable_bits()
        .into_iter()
        .map(|(k, c)| ((k, c), state.with_bit(k, c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(v: &[usize]) -> StructuredLabel {
        StructuredLabel(v.to_vec())
    }

    /// Fixed-table predictor: prediction depends only on how many bits are
    /// set, which is enough to exercise the modified-loss plumbing.
    struct TablePredictor {
        tiers: usize,
        outputs: Vec<StructuredLabel>,
    }

    struct PlainExample {
        parts: usize,
        gold: StructuredLabel,
    }

    impl BudgetedExample for PlainExample {
        fn num_parts(&self) -> usize {
            self.parts
        }
        fn gold(&self) -> &StructuredLabel {
            &self.gold
        }
    }

    impl Predictor for TablePredictor {
        type Example = PlainExample;
        fn num_tiers(&self) -> usize {
            self.tiers
        }
        fn predict(&self, _x: &PlainExample, state: &AcquisitionState) -> crate::Result<StructuredLabel> {
            Ok(self.outputs[state.count_ones().min(self.outputs.len() - 1)].clone())
        }
    }

    #[test]
    fn zero_state_costs_nothing() {
        let sched = CostSchedule::new(vec![1.0, 2.0], 0.0, 0.0).unwrap();
        let s = AcquisitionState::zero(2, 3);
        assert_eq!(state_cost(&s, &sched).unwrap(), 0.0);
    }

    #[test]
    fn full_state_cost_sums_all_bits() {
        let sched = CostSchedule::new(vec![1.0, 2.0], 0.0, 0.0).unwrap();
        let s = AcquisitionState::full(2, 3);
        assert_eq!(state_cost(&s, &sched).unwrap(), 9.0);
    }

    #[test]
    fn partial_state_cost_counts_set_bits_only() {
        let sched = CostSchedule::new(vec![1.0, 2.0], 0.0, 0.0).unwrap();
        let mut s = AcquisitionState::zero(2, 3);
        s.set(1, 0, true);
        s.set(1, 2, true);
        assert_eq!(state_cost(&s, &sched).unwrap(), 4.0);
    }

    #[test]
    fn cost_rejects_mismatched_schedule() {
        let sched = CostSchedule::new(vec![1.0], 0.0, 0.0).unwrap();
        let s = AcquisitionState::zero(2, 3);
        assert!(state_cost(&s, &sched).is_err());
    }

    #[test]
    fn hamming_counts_mismatches() {
        assert_eq!(hamming_loss(&label(&[1, 2, 3]), &label(&[1, 2, 3])).unwrap(), 0.0);
        assert_eq!(hamming_loss(&label(&[1, 2, 3]), &label(&[1, 0, 3])).unwrap(), 1.0);
        assert_eq!(hamming_loss(&label(&[1, 2, 3]), &label(&[0, 0, 0])).unwrap(), 3.0);
        assert!(hamming_loss(&label(&[1]), &label(&[1, 2])).is_err());
    }

    #[test]
    fn indicator_is_all_or_nothing() {
        assert_eq!(indicator_loss(&label(&[4, 5]), &label(&[4, 5])).unwrap(), 0.0);
        assert_eq!(indicator_loss(&label(&[4, 5]), &label(&[4, 6])).unwrap(), 1.0);
        assert_eq!(indicator_loss(&label(&[4, 5]), &label(&[5, 4])).unwrap(), 1.0);
    }

    #[test]
    fn modified_loss_with_zero_lambda_is_plain_loss() {
        let pred = TablePredictor { tiers: 2, outputs: vec![label(&[0, 0]), label(&[1, 1])] };
        let x = PlainExample { parts: 2, gold: label(&[1, 1]) };
        let sched = CostSchedule::new(vec![1.0, 5.0], 0.0, 0.0).unwrap();
        let params = ModifiedLossParams::new(LossKind::Hamming, 0.0).unwrap();
        let s = AcquisitionState::zero(2, 2);
        assert_eq!(modified_loss(&x, &x.gold, &s, &pred, &params, &sched).unwrap(), 2.0);
    }

    #[test]
    fn modified_loss_matches_hand_recomputation() {
        let pred = TablePredictor {
            tiers: 2,
            outputs: vec![label(&[0, 0]), label(&[0, 1]), label(&[1, 1])],
        };
        let x = PlainExample { parts: 2, gold: label(&[1, 1]) };
        let sched = CostSchedule::new(vec![0.5, 2.0], 0.0, 0.0).unwrap();
        let params = ModifiedLossParams::new(LossKind::Hamming, 0.25).unwrap();
        // One tier-1 bit set: table says one part still wrong; c(S) = 2.0.
        let s = AcquisitionState::zero(2, 2).with_bit(1, 0);
        let got = modified_loss(&x, &x.gold, &s, &pred, &params, &sched).unwrap();
        assert_eq!(got, 1.0 + 0.25 * 2.0);
        // Full state: loss 0, c(S) = 2*0.5 + 2*2.0 = 5.0.
        let full = AcquisitionState::full(2, 2);
        let got = modified_loss(&x, &x.gold, &full, &pred, &params, &sched).unwrap();
        assert_eq!(got, 0.0 + 0.25 * 5.0);
    }

    #[test]
    fn state_distance_counts_differing_bits() {
        let z = AcquisitionState::zero(2, 2);
        let f = AcquisitionState::full(2, 2);
        assert_eq!(state_hamming_distance(&z, &z).unwrap(), 0);
        assert_eq!(state_hamming_distance(&z, &f).unwrap(), 4);
        assert_eq!(state_hamming_distance(&z, &z.with_bit(1, 1)).unwrap(), 1);
        let other = AcquisitionState::zero(2, 3);
        assert!(state_hamming_distance(&z, &other).is_err());
    }

    #[test]
    fn zero_state_has_one_successor_per_bit() {
        let succ = feasible_successors(&AcquisitionState::zero(2, 2));
        assert_eq!(succ.len(), 4);
        assert!(feasible_successors(&AcquisitionState::full(2, 2)).is_empty());
    }

    #[test]
    fn acquirable_successors_skip_tier_zero() {
        let succ = acquirable_successors(&AcquisitionState::zero(2, 1));
        assert_eq!(succ.len(), 1);
        assert_eq!(succ[0].0, (1, 0));
        assert!(acquirable_successors(&AcquisitionState::full_acquirable(2, 3)).is_empty());
    }

    #[test]
    fn active_tier_is_highest_set_bit() {
        let mut s = AcquisitionState::zero(3, 2);
        assert_eq!(s.active_tier(0), 0);
        s.set(2, 0, true);
        assert_eq!(s.active_tier(0), 2);
        s.set(1, 1, true);
        assert_eq!(s.active_tier(1), 1);
    }

    #[test]
    fn bitmap_round_trip() {
        let mut s = AcquisitionState::zero(2, 3);
        s.set(0, 1, true);
        s.set(1, 0, true);
        s.set(1, 2, true);
        assert_eq!(s.to_bitmap(), "010|101");
        assert_eq!(AcquisitionState::from_bitmap("010|101").unwrap(), s);
        assert!(AcquisitionState::from_bitmap("01|101").is_err());
        assert!(AcquisitionState::from_bitmap("01x").is_err());
    }

    #[test]
    fn schedule_presets_are_valid() {
        let parse = CostSchedule::paper_parse();
        parse.validate().unwrap();
        assert_eq!(parse.tier_costs, vec![165.0, 110.0]);
        assert_eq!(parse.inference_cost, 75.0);
        assert_eq!(parse.full_acquirable_cost(10), 1100.0);
        let ocr = CostSchedule::ocr(1.0);
        ocr.validate().unwrap();
        assert_eq!(ocr.tier_costs[0], 0.0);
        assert!(CostSchedule::new(vec![1.0, -0.5], 0.0, 0.0).is_err());
        assert!(CostSchedule::new(vec![], 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn successors_are_one_bit_supersets(tiers in 1usize..4, parts in 1usize..5, fill in 0u32..16) {
            let mut s = AcquisitionState::zero(tiers, parts);
            let mut x = fill;
            for k in 0..tiers {
                for c in 0..parts {
                    if x & 1 == 1 { s.set(k, c, true); }
                    x >>= 1;
                }
            }
            for succ in feasible_successors(&s) {
                prop_assert_eq!(state_hamming_distance(&s, &succ).unwrap(), 1);
                prop_assert!(succ.is_superset_of(&s));
            }
        }

        #[test]
        fn cost_is_monotone_in_bits(parts in 1usize..5, d0 in 0.0f64..4.0, d1 in 0.0f64..4.0) {
            let sched = CostSchedule::new(vec![d0, d1], 0.0, 0.0).unwrap();
            let s = AcquisitionState::zero(2, parts);
            let base = state_cost(&s, &sched).unwrap();
            for succ in feasible_successors(&s) {
                prop_assert!(state_cost(&succ, &sched).unwrap() >= base);
            }
        }

        #[test]
        fn hamming_is_a_metric(a in prop::collection::vec(0usize..4, 1..6)) {
            let la = StructuredLabel(a.clone());
            prop_assert_eq!(hamming_loss(&la, &la).unwrap(), 0.0);
            let lb = StructuredLabel(a.iter().map(|v| (v + 1) % 4).collect());
            prop_assert_eq!(
                hamming_loss(&la, &lb).unwrap(),
                hamming_loss(&lb, &la).unwrap()
            );
        }

        #[test]
        fn bitmap_string_round_trips(tiers in 1usize..4, parts in 1usize..6, fill in 0u32..4096) {
            let mut s = AcquisitionState::zero(tiers, parts);
            let mut x = fill;
            for k in 0..tiers {
                for c in 0..parts {
                    if x & 1 == 1 { s.set(k, c, true); }
                    x >>= 1;
                }
            }
            prop_assert_eq!(AcquisitionState::from_bitmap(&s.to_bitmap()).unwrap(), s);
        }
    }
}
