//! Pseudo-label search: which acquisition state *should* an example have used?
//!
//! Each search evaluates the modified loss `C(X, Y, S) = L(F(X,S), Y) +
//! lambda * c(S)` over some family of states and returns the best state found
//! as an acquisition pseudo-label, together with an importance weight
//! `W = max_S' C(X, Y, S') - C(X, Y, S*)` taken over the states the search
//! actually evaluated. Examples whose state choice matters get large weights;
//! examples where every state is equally good contribute nothing.
//!
//! * [`exhaustive_pseudo_label`] scans all `2^(K*|C|)` states (guarded);
//! * [`trajectory_search`] grows one greedy bit at a time from the all-zero
//!   to the all-one state and picks the best state along the way;
//! * [`parsimonious_search`] evaluates only single-bit additions and unions
//!   every addition that improves the modified loss by at least `tau`.

use serde::{Deserialize, Serialize};

use crate::state::{
    feasible_successors, modified_loss, AcquisitionState, CostSchedule, ModifiedLossParams,
    Predictor, StructuredLabel,
};
use crate::{Error, Result};

/// Exhaustive search refuses state spaces larger than this many bits.
pub const EXHAUSTIVE_BIT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Exhaustive,
    Trajectory,
    Parsimonious,
}

/// The result of a pseudo-label search: the chosen target state, the modified
/// loss it achieves, and its importance weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub target: AcquisitionState,
    pub weight: f64,
    pub achieved_loss: f64,
    pub search: SearchKind,
}

/// The greedy acquisition path walked by [`trajectory_search`]: `states[0]`
/// is all-zero, `states.last()` all-one, adjacent states differ by one bit,
/// and `losses[i]` is the modified loss at `states[i]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<AcquisitionState>,
    pub losses: Vec<f64>,
}

/// `max - min` of a set of modified losses; the weight an example carries when
/// its best state is pitted against its worst.
pub fn importance_weight(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("importance weight of no losses"));
    }
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

fn state_from_mask(mask: u32, tiers: usize, parts: usize) -> AcquisitionState {
    let mut s = AcquisitionState::zero(tiers, parts);
    for i in 0..tiers * parts {
        if mask >> i & 1 == 1 {
            s.set(i / parts, i % parts, true);
        }
    }
    s
}

/// Scans every acquisition state and returns the modified-loss minimizer.
/// Ties are broken toward fewer set bits and then toward the smaller bitmask
/// integer (bit `i = tier * num_parts + part`), so the result is unique.
/// Errors when `K * |C|` exceeds [`EXHAUSTIVE_BIT_LIMIT`].
pub fn exhaustive_pseudo_label<P: Predictor>(
    x: &P::Example,
    gold: &StructuredLabel,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
) -> Result<PseudoLabel> {
    use crate::state::BudgetedExample;
    let tiers = predictor.num_tiers();
    let parts = x.num_parts();
    let bits = tiers * parts;
    if bits > EXHAUSTIVE_BIT_LIMIT {
        return Err(Error::StateSpaceTooLarge { bits, limit: EXHAUSTIVE_BIT_LIMIT });
    }
    let mut best: Option<(f64, u32, u32)> = None; // (loss, popcount, mask)
    let mut max_loss = f64::NEG_INFINITY;
    let mut best_state = None;
    for mask in 0..1u64 << bits {
        let mask = mask as u32;
        let s = state_from_mask(mask, tiers, parts);
        let c = modified_loss(x, gold, &s, predictor, params, sched)?;
        max_loss = max_loss.max(c);
        let key = (c, mask.count_ones(), mask);
        if best.map_or(true, |b| key < b) {
            best = Some(key);
            best_state = Some(s);
        }
    }
    let (achieved, _, _) = best.unwrap();
    Ok(PseudoLabel {
        target: best_state.unwrap(),
        weight: max_loss - achieved,
        achieved_loss: achieved,
        search: SearchKind::Exhaustive,
    })
}

/// Greedy forward pass: starting from the all-zero state, repeatedly add the
/// single bit whose successor has the smallest modified loss (ties toward the
/// lowest flat bit index) until the all-one state. The pseudo-label is the
/// best state along the walk; its weight is max minus min along the walk.
pub fn trajectory_search<P: Predictor>(
    x: &P::Example,
    gold: &StructuredLabel,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
) -> Result<(PseudoLabel, Trajectory)> {
    use crate::state::BudgetedExample;
    let tiers = predictor.num_tiers();
    let mut state = AcquisitionState::zero(tiers, x.num_parts());
    let mut states = vec![state.clone()];
    let mut losses = vec![modified_loss(x, gold, &state, predictor, params, sched)?];
    while !state.is_full() {
        let mut chosen: Option<(f64, AcquisitionState)> = None;
        for succ in feasible_successors(&state) {
            let c = modified_loss(x, gold, &succ, predictor, params, sched)?;
            // Successors arrive in flat bit order; strict < keeps the first
            // (lowest-index) minimizer.
            if chosen.as_ref().map_or(true, |(best, _)| c < *best) {
                chosen = Some((c, succ));
            }
        }
        let (c, next) = chosen.expect("non-full state has successors");
        state = next;
        states.push(state.clone());
        losses.push(c);
    }
    let mut best = 0;
    for (i, &c) in losses.iter().enumerate() {
        if c < losses[best] {
            best = i; // strict: earliest (fewest-bit) state wins ties
        }
    }
    let weight = importance_weight(&losses)?;
    let label = PseudoLabel {
        target: states[best].clone(),
        weight,
        achieved_loss: losses[best],
        search: SearchKind::Trajectory,
    };
    Ok((label, Trajectory { states, losses }))
}

/// Evaluates every single-bit addition to the all-zero state and unions all
/// additions that improve the modified loss by at least `tau` (and strictly:
/// a no-change addition is never collected, so with `tau = 0` and a loss-only
/// objective the union flags exactly the parts whose prediction a bit flip
/// fixes). Collects nothing -> returns the all-zero state.
pub fn parsimonious_search<P: Predictor>(
    x: &P::Example,
    gold: &StructuredLabel,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
    tau: f64,
) -> Result<PseudoLabel> {
    use crate::state::BudgetedExample;
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
    }
    let tiers = predictor.num_tiers();
    let zero = AcquisitionState::zero(tiers, x.num_parts());
    let base = modified_loss(x, gold, &zero, predictor, params, sched)?;
    let mut max_loss = base;
    let mut target = zero.clone();
    for succ in feasible_successors(&zero) {
        let c = modified_loss(x, gold, &succ, predictor, params, sched)?;
        max_loss = max_loss.max(c);
        let improvement = base - c;
        if improvement >= tau && improvement > 0.0 {
            target = target.union(&succ)?;
        }
    }
    let achieved = modified_loss(x, gold, &target, predictor, params, sched)?;
    max_loss = max_loss.max(achieved);
    Ok(PseudoLabel {
        target,
        weight: max_loss - achieved,
        achieved_loss: achieved,
        search: SearchKind::Parsimonious,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainModel, GlyphSequence, Glyph};
    use crate::state::{state_cost, state_hamming_distance, BudgetedExample, LossKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A tiny chain instance with controllable per-part tier features.
    /// Tier dims are [1, 1]; transitions default to zero so parts decode
    /// independently unless a test sets them.
    fn instance(tier0: &[f64], tier1: &[f64], gold: &[usize]) -> GlyphSequence {
        let glyphs: Vec<Glyph> = gold.iter().map(|_| Glyph::new(1, 1, vec![0]).unwrap()).collect();
        let feats = tier0
            .iter()
            .zip(tier1)
            .map(|(&a, &b)| vec![vec![a], vec![b]])
            .collect();
        GlyphSequence::with_tier_features(glyphs, feats, StructuredLabel(gold.to_vec())).unwrap()
    }

    /// Always-predict-0 at tier 0; tier 1 reveals the gold label through the
    /// sign of its feature. Satisfies "more features never hurt".
    fn revealing_model() -> ChainModel {
        let mut m = ChainModel::zeros(2, vec![1, 1]).unwrap();
        m.unary_weights_mut(0).copy_from_slice(&[0.125, 0.0]);
        m.unary_weights_mut(1).copy_from_slice(&[0.0, 1.0]);
        m
    }

    fn revealing_instance(gold: &[usize]) -> GlyphSequence {
        let tier0 = vec![1.0; gold.len()];
        let tier1: Vec<f64> = gold.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect();
        instance(&tier0, &tier1, gold)
    }

    fn params(lambda: f64) -> ModifiedLossParams {
        ModifiedLossParams::new(LossKind::Hamming, lambda).unwrap()
    }

    fn sched() -> CostSchedule {
        CostSchedule::new(vec![0.0, 0.5], 0.0, 0.0).unwrap()
    }

    #[test]
    fn importance_weight_is_max_minus_min() {
        assert_eq!(importance_weight(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(importance_weight(&[5.0]).unwrap(), 0.0);
        assert!(importance_weight(&[]).is_err());
    }

    #[test]
    fn huge_lambda_keeps_the_zero_state() {
        let x = revealing_instance(&[1, 0, 1]);
        let p = exhaustive_pseudo_label(&x, x.gold(), &revealing_model(), &params(1e6), &sched()).unwrap();
        assert_eq!(p.target, AcquisitionState::zero(2, 3));
        // Every acquired state is worse, so the zero state's weight is large.
        assert!(p.weight > 0.0);
    }

    #[test]
    fn perfect_cheap_prediction_stays_at_zero_bits() {
        // Gold all-zero: the tier-0 predictor is already right everywhere, so
        // with lambda = 0 every state has loss 0 and the fewest-bits tie-break
        // must pick the zero state with weight 0.
        let x = revealing_instance(&[0, 0]);
        let mut m = revealing_model();
        // Make tier 1 agree with tier 0 on gold-0 parts (it already does).
        let p = exhaustive_pseudo_label(&x, x.gold(), &m, &params(0.0), &sched()).unwrap();
        assert_eq!(p.target, AcquisitionState::zero(2, 2));
        assert_eq!(p.weight, 0.0);
        assert_eq!(p.achieved_loss, 0.0);
        // ... and an informative tier 1 does not change that.
        m.unary_weights_mut(1).copy_from_slice(&[0.5, 0.25]);
        let p = exhaustive_pseudo_label(&x, x.gold(), &m, &params(0.0), &sched()).unwrap();
        assert_eq!(p.target, AcquisitionState::zero(2, 2));
    }

    #[test]
    fn exhaustive_guard_rejects_large_state_spaces() {
        let gold = vec![0usize; 11]; // 2 * 11 = 22 bits > 20
        let x = revealing_instance(&gold);
        let err = exhaustive_pseudo_label(&x, x.gold(), &revealing_model(), &params(0.1), &sched());
        assert!(matches!(err, Err(Error::StateSpaceTooLarge { bits: 22, .. })));
    }

    /// Independent exhaustive enumerator: recursive over bit positions with an
    /// explicitly coded tie rule, no shared code with the library path.
    fn exhaustive_by_recursion(
        x: &GlyphSequence,
        model: &ChainModel,
        p: &ModifiedLossParams,
        s: &CostSchedule,
    ) -> (AcquisitionState, f64, f64) {
        use crate::state::BudgetedExample;
        let (tiers, parts) = (2, x.num_parts());
        let mut best: Option<(AcquisitionState, f64, u32, u32)> = None;
        let mut max_loss = f64::NEG_INFINITY;
        fn rec(
            bit: usize,
            total: usize,
            mask: u32,
            visit: &mut dyn FnMut(u32),
        ) {
            if bit == total {
                visit(mask);
                return;
            }
            rec(bit + 1, total, mask, visit);
            rec(bit + 1, total, mask | (1 << bit), visit);
        }
        let mut visit = |mask: u32| {
            let st = state_from_mask(mask, tiers, parts);
            let c = modified_loss(x, x.gold(), &st, model, p, s).unwrap();
            max_loss = max_loss.max(c);
            let pop = mask.count_ones();
            let replace = match &best {
                None => true,
                Some((_, bc, bp, bm)) => {
                    c < *bc || (c == *bc && (pop < *bp || (pop == *bp && mask < *bm)))
                }
            };
            if replace {
                best = Some((st, c, pop, mask));
            }
        };
        rec(0, tiers * parts, 0, &mut visit);
        let (state, c, _, _) = best.unwrap();
        (state, c, max_loss)
    }

    #[test]
    fn exhaustive_agrees_with_independent_enumerator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sched = CostSchedule::new(vec![0.25, 0.5], 0.0, 0.0).unwrap();
        for _ in 0..25 {
            let parts = rng.gen_range(1..=3);
            let gold: Vec<usize> = (0..parts).map(|_| rng.gen_range(0..2)).collect();
            let tier0: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let tier1: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let x = instance(&tier0, &tier1, &gold);
            let mut m = ChainModel::zeros(2, vec![1, 1]).unwrap();
            for t in 0..2 {
                let w: Vec<f64> = (0..2).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
                m.unary_weights_mut(t).copy_from_slice(&w);
            }
            for v in m.transitions_mut() {
                *v = f64::from(rng.gen_range(-4..4)) / 4.0;
            }
            let p = params(0.125);
            let got = exhaustive_pseudo_label(&x, x.gold(), &m, &p, &sched).unwrap();
            let (state, c, max_loss) = exhaustive_by_recursion(&x, &m, &p, &sched);
            assert_eq!(got.target, state);
            assert_eq!(got.achieved_loss, c);
            assert_eq!(got.weight, max_loss - c);
        }
    }

    #[test]
    fn trajectory_visits_every_bit_once() {
        let x = revealing_instance(&[1, 0, 1]);
        let (label, traj) =
            trajectory_search(&x, x.gold(), &revealing_model(), &params(0.125), &sched()).unwrap();
        assert_eq!(traj.states.len(), 2 * 3 + 1);
        assert_eq!(traj.losses.len(), traj.states.len());
        assert_eq!(traj.states[0], AcquisitionState::zero(2, 3));
        assert!(traj.states.last().unwrap().is_full());
        for w in traj.states.windows(2) {
            assert_eq!(state_hamming_distance(&w[0], &w[1]).unwrap(), 1);
            assert!(w[1].is_superset_of(&w[0]));
        }
        // The chosen label is at least as good as both endpoints.
        assert!(label.achieved_loss <= traj.losses[0]);
        assert!(label.achieved_loss <= *traj.losses.last().unwrap());
        assert_eq!(label.weight, importance_weight(&traj.losses).unwrap());
    }

    #[test]
    fn search_quality_is_ordered() {
        // exhaustive <= trajectory <= zero-state, across random instances.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sched = CostSchedule::new(vec![0.0, 0.5], 0.0, 0.0).unwrap();
        for _ in 0..20 {
            let parts = rng.gen_range(1..=4);
            let gold: Vec<usize> = (0..parts).map(|_| rng.gen_range(0..2)).collect();
            let tier0: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let tier1: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let x = instance(&tier0, &tier1, &gold);
            let mut m = ChainModel::zeros(2, vec![1, 1]).unwrap();
            for t in 0..2 {
                let w: Vec<f64> = (0..2).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
                m.unary_weights_mut(t).copy_from_slice(&w);
            }
            let p = params(0.25);
            let zero = AcquisitionState::zero(2, parts);
            let zero_loss = modified_loss(&x, x.gold(), &zero, &m, &p, &sched).unwrap();
            let ex = exhaustive_pseudo_label(&x, x.gold(), &m, &p, &sched).unwrap();
            let (tr, _) = trajectory_search(&x, x.gold(), &m, &p, &sched).unwrap();
            assert!(ex.achieved_loss <= tr.achieved_loss);
            assert!(tr.achieved_loss <= zero_loss);
        }
    }

    #[test]
    fn parsimonious_flags_exactly_the_wrong_parts() {
        // Tier-0 predicts all-0; gold has 1s at parts 1 and 3. A tier-1 bit
        // fixes exactly its own part and never breaks a correct one.
        let gold = [0, 1, 0, 1];
        let x = revealing_instance(&gold);
        let m = revealing_model();
        let p = params(0.0); // loss-only objective
        let label = parsimonious_search(&x, x.gold(), &m, &p, &sched(), 0.0).unwrap();
        let mut expected = AcquisitionState::zero(2, 4);
        expected.set(1, 1, true);
        expected.set(1, 3, true);
        assert_eq!(label.target, expected);
        assert_eq!(label.achieved_loss, 0.0);
        assert_eq!(label.weight, 2.0); // zero state got both parts wrong
    }

    #[test]
    fn parsimonious_with_unreachable_margin_keeps_zero_state() {
        let x = revealing_instance(&[1, 1]);
        let m = revealing_model();
        // Each single bit improves the loss by exactly 1; demand more.
        let label = parsimonious_search(&x, x.gold(), &m, &params(0.0), &sched(), 1.5).unwrap();
        assert_eq!(label.target, AcquisitionState::zero(2, 2));
        assert!(parsimonious_search(&x, x.gold(), &m, &params(0.0), &sched(), -0.5).is_err());
    }

    #[test]
    fn parsimonious_matches_literal_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let sched = CostSchedule::new(vec![0.0, 0.25], 0.0, 0.0).unwrap();
        for _ in 0..20 {
            let parts = rng.gen_range(1..=4);
            let gold: Vec<usize> = (0..parts).map(|_| rng.gen_range(0..2)).collect();
            let tier0: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let tier1: Vec<f64> = (0..parts).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
            let x = instance(&tier0, &tier1, &gold);
            let mut m = ChainModel::zeros(2, vec![1, 1]).unwrap();
            for t in 0..2 {
                let w: Vec<f64> = (0..2).map(|_| f64::from(rng.gen_range(-8..8)) / 4.0).collect();
                m.unary_weights_mut(t).copy_from_slice(&w);
            }
            let p = params(0.5);
            let tau = f64::from(rng.gen_range(0..3)) / 4.0;
            let got = parsimonious_search(&x, x.gold(), &m, &p, &sched, tau).unwrap();

            let zero = AcquisitionState::zero(2, parts);
            let base = modified_loss(&x, x.gold(), &zero, &m, &p, &sched).unwrap();
            let mut expected = zero.clone();
            for k in 0..2 {
                for c in 0..parts {
                    let s = zero.with_bit(k, c);
                    let loss = modified_loss(&x, x.gold(), &s, &m, &p, &sched).unwrap();
                    if base - loss >= tau && base - loss > 0.0 {
                        expected.set(k, c, true);
                    }
                }
            }
            assert_eq!(got.target, expected);
            assert_eq!(
                got.achieved_loss,
                modified_loss(&x, x.gold(), &expected, &m, &p, &sched).unwrap()
            );
        }
    }

    #[test]
    fn pseudo_labels_respect_cost_pressure() {
        // As lambda grows the exhaustive target never acquires more.
        let x = revealing_instance(&[1, 1, 0]);
        let m = revealing_model();
        let s = sched();
        let mut last_bits = usize::MAX;
        for lambda in [0.0, 0.5, 1.0, 4.0] {
            let label = exhaustive_pseudo_label(&x, x.gold(), &m, &params(lambda), &s).unwrap();
            let bits = label.target.count_ones();
            assert!(bits <= last_bits, "lambda {lambda} acquired more than a smaller lambda");
            last_bits = bits;
            assert!(state_cost(&label.target, &s).unwrap().is_finite());
        }
    }
}
