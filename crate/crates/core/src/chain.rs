//! Linear-chain sequence labeling over glyph images with two feature tiers.
//!
//! Tier 0 is the raw binary pixel vector (with a constant bias entry), tier 1
//! a histogram-of-oriented-gradients descriptor. A [`ChainModel`] scores each
//! part with the weight blocks of every tier active at that part (cumulative:
//! highest set tier `k` activates tiers `0..=k`) plus label-pair transition
//! weights, and decodes with Viterbi. Training is an averaged structured
//! perceptron where each example is decoded under a freshly sampled random
//! acquisition state, so one model stays calibrated across the whole state
//! space instead of needing one model per feature combination.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::state::{
    AcquisitionState, BudgetedExample, MarginPredictor, Predictor, StateSampler, StructuredLabel,
};
use crate::{Error, Result};

/// A binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Glyph {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyInput("glyph with zero height or width"));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "glyph {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(&bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::InvalidParameter(format!("glyph pixels must be 0/1, got {bad}")));
        }
        Ok(Glyph { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Flattened pixel vector plus a trailing constant-1 bias entry
/// (`height * width + 1` values; 129 for the 16x8 OCR glyphs).
pub fn extract_pixels(glyph: &Glyph) -> Vec<f64> {
    let mut v: Vec<f64> = glyph.pixels.iter().map(|&p| f64::from(p)).collect();
    v.push(1.0);
    v
}

const HOG_CELL: usize = 3;
const HOG_BINS: usize = 9;
const HOG_NORM_EPS: f64 = 1e-6;

/// Histogram of oriented gradients with 3x3-pixel cells (floor tiling: rows
/// and columns that do not fill a cell are dropped), 9 unsigned orientation
/// bins of 20 degrees, gradient magnitude voting without interpolation, and
/// cell-wise L2 normalization `v / sqrt(sum(v^2) + 1e-6)`.
///
/// Gradients are central differences with replicated borders, so a constant
/// glyph has a zero gradient field and an all-zero descriptor. A 16x8 glyph
/// yields `5 * 2 * 9 = 90` values (cells row-major, bins innermost).
pub fn extract_hog(glyph: &Glyph) -> Vec<f64> {
    let cells_r = glyph.height / HOG_CELL;
    let cells_c = glyph.width / HOG_CELL;
    let mut out = vec![0.0; cells_r * cells_c * HOG_BINS];
    let px = |r: usize, c: usize| f64::from(glyph.get(r, c));
    for ci in 0..cells_r {
        for cj in 0..cells_c {
            let hist = &mut out[(ci * cells_c + cj) * HOG_BINS..][..HOG_BINS];
            for r in ci * HOG_CELL..(ci + 1) * HOG_CELL {
                for c in cj * HOG_CELL..(cj + 1) * HOG_CELL {
                    let gx = px(r, (c + 1).min(glyph.width - 1)) - px(r, c.saturating_sub(1));
                    let gy = px((r + 1).min(glyph.height - 1), c) - px(r.saturating_sub(1), c);
                    let mag = (gx * gx + gy * gy).sqrt();
                    if mag == 0.0 {
                        continue;
                    }
                    let mut theta = gy.atan2(gx).to_degrees();
                    if theta < 0.0 {
                        theta += 180.0;
                    }
                    if theta >= 180.0 {
                        theta -= 180.0;
                    }
                    let bin = ((theta / 20.0) as usize).min(HOG_BINS - 1);
                    hist[bin] += mag;
                }
            }
            let norm = (hist.iter().map(|v| v * v).sum::<f64>() + HOG_NORM_EPS).sqrt();
            hist.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// A sequence of glyphs with a gold letter per glyph and precomputed per-tier
/// feature vectors per part.
///
/// The usual construction extracts pixels (tier 0) and HOG (tier 1) from the
/// stored glyphs; [`GlyphSequence::with_tier_features`] lets corpus generators
/// supply their own vectors, e.g. a degraded pixel view next to a clean HOG
/// view.
#[derive(Clone, Debug)]
pub struct GlyphSequence {
    glyphs: Vec<Glyph>,
    tier_feats: Vec<Vec<Vec<f64>>>,
    gold: StructuredLabel,
}

impl GlyphSequence {
    pub fn from_glyphs(glyphs: Vec<Glyph>, gold: StructuredLabel) -> Result<Self> {
        let tier_feats = glyphs
            .iter()
            .map(|g| vec![extract_pixels(g), extract_hog(g)])
            .collect();
        Self::with_tier_features(glyphs, tier_feats, gold)
    }

    pub fn with_tier_features(
        glyphs: Vec<Glyph>,
        tier_feats: Vec<Vec<Vec<f64>>>,
        gold: StructuredLabel,
    ) -> Result<Self> {
        if glyphs.is_empty() {
            return Err(Error::EmptyInput("glyph sequence with no glyphs"));
        }
        if tier_feats.len() != glyphs.len() || gold.len() != glyphs.len() {
            return Err(Error::DimensionMismatch(format!(
                "sequence of {} glyphs with {} feature rows and {} labels",
                glyphs.len(),
                tier_feats.len(),
                gold.len()
            )));
        }
        let tiers = tier_feats[0].len();
        if tiers == 0 {
            return Err(Error::EmptyInput("part with no feature tiers"));
        }
        for feats in &tier_feats {
            if feats.len() != tiers {
                return Err(Error::DimensionMismatch("ragged tier count across parts".into()));
            }
            for (t, f) in feats.iter().enumerate() {
                if f.len() != tier_feats[0][t].len() {
                    return Err(Error::DimensionMismatch(format!(
                        "tier {t} feature dimension varies within a sequence"
                    )));
                }
            }
        }
        Ok(GlyphSequence { glyphs, tier_feats, gold })
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn glyph(&self, part: usize) -> &Glyph {
        &self.glyphs[part]
    }

    pub fn num_tiers(&self) -> usize {
        self.tier_feats[0].len()
    }

    pub fn tier_features(&self, part: usize, tier: usize) -> &[f64] {
        &self.tier_feats[part][tier]
    }

    pub fn tier_dims(&self) -> Vec<usize> {
        self.tier_feats[0].iter().map(Vec::len).collect()
    }
}

impl BudgetedExample for GlyphSequence {
    fn num_parts(&self) -> usize {
        self.glyphs.len()
    }

    fn gold(&self) -> &StructuredLabel {
        &self.gold
    }
}

/// Per-part label scores of one decoded instance, part-major.
#[derive(Clone, Debug)]
pub struct ScoreTable {
    parts: usize,
    alphabet: usize,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(parts: usize, alphabet: usize) -> Self {
        ScoreTable { parts, alphabet, scores: vec![0.0; parts * alphabet] }
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn get(&self, part: usize, label: usize) -> f64 {
        self.scores[part * self.alphabet + label]
    }

    pub fn set(&mut self, part: usize, label: usize, v: f64) {
        self.scores[part * self.alphabet + label] = v;
    }
}

/// Linear-chain model: one unary weight block per feature tier plus a
/// label-pair transition matrix (transitions are state-independent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    alphabet: usize,
    tier_dims: Vec<usize>,
    /// `unary[k][label * tier_dims[k] + j]`
    unary: Vec<Vec<f64>>,
    /// `transitions[prev * alphabet + next]`
    transitions: Vec<f64>,
}

const CHAIN_MODEL_FORMAT: &str = "budgetsp-chain-model";
const CHAIN_MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedChainModel {
    format: String,
    version: u32,
    model: ChainModel,
}

impl ChainModel {
    pub fn zeros(alphabet: usize, tier_dims: Vec<usize>) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::EmptyInput("chain model with empty alphabet"));
        }
        if tier_dims.is_empty() {
            return Err(Error::EmptyInput("chain model with no feature tiers"));
        }
        let unary = tier_dims.iter().map(|&d| vec![0.0; alphabet * d]).collect();
        Ok(ChainModel { alphabet, tier_dims: tier_dims.clone(), unary, transitions: vec![0.0; alphabet * alphabet] })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn tier_dims(&self) -> &[usize] {
        &self.tier_dims
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn unary_weights_mut(&mut self, tier: usize) -> &mut [f64] {
        &mut self.unary[tier]
    }

    pub fn transitions_mut(&mut self) -> &mut [f64] {
        &mut self.transitions
    }

    fn check_example(&self, x: &GlyphSequence) -> Result<()> {
        if x.num_tiers() != self.tier_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "example has {} feature tiers, model has {}",
                x.num_tiers(),
                self.tier_dims.len()
            )));
        }
        let dims = x.tier_dims();
        if dims != self.tier_dims {
            return Err(Error::DimensionMismatch(format!(
                "example tier dims {dims:?} differ from model dims {:?}",
                self.tier_dims
            )));
        }
        Ok(())
    }

    /// Unary score table for `x` under `state`: part `c` is scored with the
    /// weight blocks of tiers `0..=state.active_tier(c)`.
    pub fn chain_scores(&self, x: &GlyphSequence, state: &AcquisitionState) -> Result<ScoreTable> {
        self.check_example(x)?;
        if state.num_tiers() != self.tier_dims.len() || state.num_parts() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, expected {}x{}",
                state.num_tiers(),
                state.num_parts(),
                self.tier_dims.len(),
                x.len()
            )));
        }
        let mut table = ScoreTable::zeros(x.len(), self.alphabet);
        for c in 0..x.len() {
            let active = state.active_tier(c);
            for y in 0..self.alphabet {
                let mut s = 0.0;
                for k in 0..=active {
                    let dim = self.tier_dims[k];
                    let w = &self.unary[k][y * dim..(y + 1) * dim];
                    let f = x.tier_features(c, k);
                    s += dot(w, f);
                }
                table.set(c, y, s);
            }
        }
        Ok(table)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-sum Viterbi decode. Ties are broken toward the lowest label index, both
/// at each backpointer decision and at the final position, so decoding is
/// deterministic. Returns the labeling and its total score.
pub fn viterbi(unary: &ScoreTable, transitions: &[f64]) -> Result<(StructuredLabel, f64)> {
    let (parts, a) = (unary.parts(), unary.alphabet());
    if parts == 0 {
        return Err(Error::EmptyInput("viterbi over an empty sequence"));
    }
    if transitions.len() != a * a {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix has {} entries, expected {}",
            transitions.len(),
            a * a
        )));
    }
    let mut dp = vec![0.0f64; parts * a];
    let mut bp = vec![0usize; parts * a];
    for y in 0..a {
        dp[y] = unary.get(0, y);
    }
    for c in 1..parts {
        for y in 0..a {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..a {
                let s = dp[(c - 1) * a + p] + transitions[p * a + y];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            dp[c * a + y] = best + unary.get(c, y);
            bp[c * a + y] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..a {
        if dp[(parts - 1) * a + y] > best {
            best = dp[(parts - 1) * a + y];
            last = y;
        }
    }
    let mut labels = vec![0usize; parts];
    labels[parts - 1] = last;
    for c in (1..parts).rev() {
        labels[c - 1] = bp[c * a + labels[c]];
    }
    Ok((StructuredLabel(labels), best))
}

/// Total score of the best labeling that differs from the Viterbi labeling in
/// at least one position, computed from max-marginals. Returns
/// `(best, second_best)`; `second_best` is `-inf` when the alphabet has a
/// single label (no competing labeling exists).
pub fn viterbi_second_best(unary: &ScoreTable, transitions: &[f64]) -> Result<(f64, f64)> {
    let (parts, a) = (unary.parts(), unary.alphabet());
    let (best_labels, best) = viterbi(unary, transitions)?;
    if a < 2 {
        return Ok((best, f64::NEG_INFINITY));
    }
    // fwd[c][y]: best prefix ending in y at c (unary at c included).
    let mut fwd = vec![0.0f64; parts * a];
    for y in 0..a {
        fwd[y] = unary.get(0, y);
    }
    for c in 1..parts {
        for y in 0..a {
            let mut m = f64::NEG_INFINITY;
            for p in 0..a {
                m = m.max(fwd[(c - 1) * a + p] + transitions[p * a + y]);
            }
            fwd[c * a + y] = m + unary.get(c, y);
        }
    }
    // bwd[c][y]: best suffix starting with y at c (unary at c included).
    let mut bwd = vec![0.0f64; parts * a];
    for y in 0..a {
        bwd[(parts - 1) * a + y] = unary.get(parts - 1, y);
    }
    for c in (0..parts - 1).rev() {
        for y in 0..a {
            let mut m = f64::NEG_INFINITY;
            for n in 0..a {
                m = m.max(transitions[y * a + n] + bwd[(c + 1) * a + n]);
            }
            bwd[c * a + y] = m + unary.get(c, y);
        }
    }
    // Any labeling != best differs somewhere; take the best over "position c
    // forced away from the Viterbi label".
    let mut second = f64::NEG_INFINITY;
    for c in 0..parts {
        for y in 0..a {
            if y == best_labels.0[c] {
                continue;
            }
            second = second.max(fwd[c * a + y] + bwd[c * a + y] - unary.get(c, y));
        }
    }
    Ok((best, second))
}

impl Predictor for ChainModel {
    type Example = GlyphSequence;

    fn num_tiers(&self) -> usize {
        self.tier_dims.len()
    }

    fn predict(&self, x: &GlyphSequence, state: &AcquisitionState) -> Result<StructuredLabel> {
        let table = self.chain_scores(x, state)?;
        Ok(viterbi(&table, &self.transitions)?.0)
    }
}

impl MarginPredictor for ChainModel {
    /// Confidence = (best total score - second-best total score) / |C|.
    fn confidence(&self, x: &GlyphSequence, state: &AcquisitionState) -> Result<f64> {
        let table = self.chain_scores(x, state)?;
        let (best, second) = viterbi_second_best(&table, &self.transitions)?;
        if second == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok((best - second) / x.len() as f64)
    }
}

/// Training knobs for the averaged structured perceptron.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainTrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub sampler: StateSampler,
}

impl Default for ChainTrainParams {
    fn default() -> Self {
        ChainTrainParams { epochs: 50, learning_rate: 0.1, seed: 1, sampler: StateSampler::default() }
    }
}

impl ChainTrainParams {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        self.sampler.validate()
    }
}

/// Lazily-averaged weight vector: `add` applies a perceptron update, `tick`
/// advances the averaging clock one visit, `average` finalizes to the mean of
/// the per-visit weight snapshots.
struct AveragedVec {
    w: Vec<f64>,
    acc: Vec<f64>,
    stamp: Vec<u64>,
    now: u64,
}

impl AveragedVec {
    fn new(n: usize) -> Self {
        AveragedVec { w: vec![0.0; n], acc: vec![0.0; n], stamp: vec![0; n], now: 0 }
    }

    fn add(&mut self, i: usize, delta: f64) {
        self.acc[i] += self.w[i] * (self.now - self.stamp[i]) as f64;
        self.stamp[i] = self.now;
        self.w[i] += delta;
    }

    fn tick(&mut self) {
        self.now += 1;
    }

    fn average(mut self) -> Vec<f64> {
        let total = self.now.max(1) as f64;
        for i in 0..self.w.len() {
            self.acc[i] += self.w[i] * (self.now - self.stamp[i]) as f64;
        }
        self.acc.iter_mut().for_each(|v| *v /= total);
        self.acc
    }
}

/// Trains a [`ChainModel`] with the averaged structured perceptron. Every
/// example visit samples a fresh acquisition state, decodes under it, and on a
/// mistake updates only the weight blocks that were active under that state.
/// The returned model carries the average of the weight vector over all
/// visits. Fully deterministic given the seed.
pub fn train_chain(
    data: &[GlyphSequence],
    alphabet: usize,
    params: &ChainTrainParams,
) -> Result<ChainModel> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("chain training set"));
    }
    let tier_dims = data[0].tier_dims();
    let tiers = tier_dims.len();
    for (i, x) in data.iter().enumerate() {
        if x.tier_dims() != tier_dims {
            return Err(Error::DimensionMismatch(format!(
                "example {i} has tier dims {:?}, expected {tier_dims:?}",
                x.tier_dims()
            )));
        }
        if let Some(&bad) = x.gold().0.iter().find(|&&y| y >= alphabet) {
            return Err(Error::InvalidParameter(format!(
                "example {i} has label {bad} outside alphabet of {alphabet}"
            )));
        }
    }

    let mut model = ChainModel::zeros(alphabet, tier_dims.clone())?;
    let mut unary: Vec<AveragedVec> = tier_dims.iter().map(|&d| AveragedVec::new(alphabet * d)).collect();
    let mut trans = AveragedVec::new(alphabet * alphabet);
    let lr = params.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &data[i];
            let state = params.sampler.sample(&mut rng, tiers, x.len());
            // Decode with the *current* (not averaged) weights.
            for (k, avg) in unary.iter().enumerate() {
                model.unary[k].copy_from_slice(&avg.w);
            }
            model.transitions.copy_from_slice(&trans.w);
            let predicted = model.predict(x, &state)?;
            let gold = x.gold();
            if predicted != *gold {
                for c in 0..x.len() {
                    let (yg, yp) = (gold.0[c], predicted.0[c]);
                    if yg != yp {
                        for k in 0..=state.active_tier(c) {
                            let dim = tier_dims[k];
                            let f = x.tier_features(c, k);
                            for j in 0..dim {
                                if f[j] != 0.0 {
                                    unary[k].add(yg * dim + j, lr * f[j]);
                                    unary[k].add(yp * dim + j, -lr * f[j]);
                                }
                            }
                        }
                    }
                    if c > 0 {
                        let g = (gold.0[c - 1], yg);
                        let p = (predicted.0[c - 1], yp);
                        if g != p {
                            trans.add(g.0 * alphabet + g.1, lr);
                            trans.add(p.0 * alphabet + p.1, -lr);
                        }
                    }
                }
            }
            unary.iter_mut().for_each(AveragedVec::tick);
            trans.tick();
        }
    }

    for (k, avg) in unary.into_iter().enumerate() {
        model.unary[k] = avg.average();
    }
    model.transitions = trans.average();
    Ok(model)
}

impl ChainModel {
    pub fn to_json(&self) -> Result<String> {
        let v = VersionedChainModel {
            format: CHAIN_MODEL_FORMAT.into(),
            version: CHAIN_MODEL_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&v)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: VersionedChainModel = serde_json::from_str(s)?;
        if v.format != CHAIN_MODEL_FORMAT || v.version != CHAIN_MODEL_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model file: format {:?} version {}",
                v.format, v.version
            )));
        }
        Ok(v.model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn glyph_16x8(fill: impl Fn(usize, usize) -> u8) -> Glyph {
        let mut px = Vec::with_capacity(128);
        for r in 0..16 {
            for c in 0..8 {
                px.push(fill(r, c));
            }
        }
        Glyph::new(16, 8, px).unwrap()
    }

    #[test]
    fn pixel_extraction_appends_bias() {
        let zero = glyph_16x8(|_, _| 0);
        let v = extract_pixels(&zero);
        assert_eq!(v.len(), 129);
        assert_eq!(v[..128], vec![0.0; 128][..]);
        assert_eq!(v[128], 1.0);
        let ones = glyph_16x8(|_, _| 1);
        let v = extract_pixels(&ones);
        assert_eq!(v, vec![1.0; 129]);
        let single = glyph_16x8(|r, c| u8::from(r == 2 && c == 3));
        let v = extract_pixels(&single);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 2); // pixel + bias
        assert_eq!(v[2 * 8 + 3], 1.0);
    }

    #[test]
    fn hog_of_constant_glyph_is_zero() {
        for g in [glyph_16x8(|_, _| 0), glyph_16x8(|_, _| 1)] {
            let v = extract_hog(&g);
            assert_eq!(v.len(), 90);
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn hog_vertical_step_edge_lands_in_horizontal_gradient_bin() {
        // Columns 0..=3 dark, 4..=7 bright: gx = 1 at columns 3 and 4 (central
        // differences, replicated borders), gy = 0 everywhere. All energy goes
        // to bin 0 of the middle cell column: 3 rows x 2 columns = 6 votes of
        // magnitude 1, normalized by sqrt(36 + eps).
        let g = glyph_16x8(|_, c| u8::from(c >= 4));
        let v = extract_hog(&g);
        let expected = 6.0 / (36.0f64 + 1e-6).sqrt();
        for ci in 0..5 {
            for cj in 0..2 {
                let hist = &v[(ci * 2 + cj) * 9..][..9];
                if cj == 1 {
                    assert!((hist[0] - expected).abs() < 1e-12, "cell ({ci},{cj}): {hist:?}");
                    assert!(hist[1..].iter().all(|&x| x == 0.0));
                } else {
                    assert!(hist.iter().all(|&x| x == 0.0), "cell ({ci},{cj}): {hist:?}");
                }
            }
        }
    }

    fn tiny_sequence(labels: &[usize], tier0: &[Vec<f64>], tier1: &[Vec<f64>]) -> GlyphSequence {
        let glyphs: Vec<Glyph> = labels.iter().map(|_| glyph_16x8(|_, _| 0)).collect();
        let feats = tier0
            .iter()
            .zip(tier1)
            .map(|(a, b)| vec![a.clone(), b.clone()])
            .collect();
        GlyphSequence::with_tier_features(glyphs, feats, StructuredLabel(labels.to_vec())).unwrap()
    }

    #[test]
    fn chain_scores_use_only_active_tiers() {
        let x = tiny_sequence(&[0, 1], &[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![2.0], vec![3.0]]);
        let mut m = ChainModel::zeros(2, vec![2, 1]).unwrap();
        // tier-0 weights: label 0 likes feature 0; label 1 likes feature 1.
        m.unary[0] = vec![1.0, 0.0, 0.0, 1.0];
        // tier-1 weights: label 1 likes the tier-1 feature.
        m.unary[1] = vec![0.0, 0.5];
        let zero = AcquisitionState::zero(2, 2);
        let t = m.chain_scores(&x, &zero).unwrap();
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.get(1, 1), 1.0);
        // Acquiring tier 1 at part 1 adds 0.5 * 3.0 to label 1 there only.
        let s = zero.with_bit(1, 1);
        let t = m.chain_scores(&x, &s).unwrap();
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.get(1, 1), 1.0 + 1.5);
    }

    #[test]
    fn zero_model_scores_are_zero() {
        let x = tiny_sequence(&[0, 1], &[vec![1.0], vec![1.0]], &[vec![1.0], vec![1.0]]);
        let m = ChainModel::zeros(2, vec![1, 1]).unwrap();
        let t = m.chain_scores(&x, &AcquisitionState::full(2, 2)).unwrap();
        for c in 0..2 {
            for y in 0..2 {
                assert_eq!(t.get(c, y), 0.0);
            }
        }
    }

    #[test]
    fn viterbi_single_part_is_argmax() {
        let mut t = ScoreTable::zeros(1, 3);
        t.set(0, 0, 0.5);
        t.set(0, 1, 2.0);
        t.set(0, 2, 1.0);
        let (labels, score) = viterbi(&t, &vec![0.0; 9]).unwrap();
        assert_eq!(labels.0, vec![1]);
        assert_eq!(score, 2.0);
    }

    #[test]
    fn viterbi_breaks_ties_toward_lowest_label() {
        let t = ScoreTable::zeros(3, 3);
        let (labels, score) = viterbi(&t, &vec![0.0; 9]).unwrap();
        assert_eq!(labels.0, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_rejects_empty_input() {
        let t = ScoreTable::zeros(0, 2);
        assert!(viterbi(&t, &vec![0.0; 4]).is_err());
    }

    /// Brute-force decode by enumerating every labeling. Scores are drawn as
    /// dyadic rationals so that both summation orders are exact and score
    /// equality can be asserted without a tolerance.
    fn brute_force_decode(t: &ScoreTable, trans: &[f64]) -> (Vec<usize>, f64) {
        let (parts, a) = (t.parts(), t.alphabet());
        let mut best = (vec![0; parts], f64::NEG_INFINITY);
        let total = a.pow(parts as u32);
        for code in 0..total {
            let mut labels = Vec::with_capacity(parts);
            let mut x = code;
            for _ in 0..parts {
                labels.push(x % a);
                x /= a;
            }
            let mut s = t.get(0, labels[0]);
            for c in 1..parts {
                s += trans[labels[c - 1] * a + labels[c]] + t.get(c, labels[c]);
            }
            if s > best.1 {
                best = (labels, s);
            }
        }
        best
    }

    fn dyadic<R: Rng>(rng: &mut R) -> f64 {
        f64::from(rng.gen_range(-(1 << 20)..(1 << 20))) / 1024.0
    }

    #[test]
    fn viterbi_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..40 {
            let parts = rng.gen_range(1..=6);
            let a = rng.gen_range(2..=4);
            let mut t = ScoreTable::zeros(parts, a);
            for c in 0..parts {
                for y in 0..a {
                    t.set(c, y, dyadic(&mut rng));
                }
            }
            let trans: Vec<f64> = (0..a * a).map(|_| dyadic(&mut rng)).collect();
            let (labels, score) = viterbi(&t, &trans).unwrap();
            let (bf_labels, bf_score) = brute_force_decode(&t, &trans);
            assert_eq!(score, bf_score);
            assert_eq!(labels.0, bf_labels);
        }
    }

    #[test]
    fn second_best_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let parts = rng.gen_range(1..=5);
            let a = rng.gen_range(2..=4);
            let mut t = ScoreTable::zeros(parts, a);
            for c in 0..parts {
                for y in 0..a {
                    t.set(c, y, dyadic(&mut rng));
                }
            }
            let trans: Vec<f64> = (0..a * a).map(|_| dyadic(&mut rng)).collect();
            let (best, second) = viterbi_second_best(&t, &trans).unwrap();
            // Enumerate all labelings, track top two distinct-labelings scores.
            let (bf_labels, bf_best) = brute_force_decode(&t, &trans);
            let mut bf_second = f64::NEG_INFINITY;
            let total = a.pow(parts as u32);
            for code in 0..total {
                let mut labels = Vec::with_capacity(parts);
                let mut x = code;
                for _ in 0..parts {
                    labels.push(x % a);
                    x /= a;
                }
                if labels == bf_labels {
                    continue;
                }
                let mut s = t.get(0, labels[0]);
                for c in 1..parts {
                    s += trans[labels[c - 1] * a + labels[c]] + t.get(c, labels[c]);
                }
                bf_second = bf_second.max(s);
            }
            assert_eq!(best, bf_best);
            assert_eq!(second, bf_second);
        }
    }

    fn separable_toyset() -> Vec<GlyphSequence> {
        // Two letters with disjoint pixel patterns; trivially separable.
        let ga = glyph_16x8(|r, _| u8::from(r < 8));
        let gb = glyph_16x8(|r, _| u8::from(r >= 8));
        let seq = |labels: &[usize]| {
            let glyphs: Vec<Glyph> =
                labels.iter().map(|&y| if y == 0 { ga.clone() } else { gb.clone() }).collect();
            GlyphSequence::from_glyphs(glyphs, StructuredLabel(labels.to_vec())).unwrap()
        };
        vec![seq(&[0, 1, 0]), seq(&[1, 1]), seq(&[0, 0, 1, 1]), seq(&[1, 0])]
    }

    #[test]
    fn training_fits_separable_toyset() {
        let data = separable_toyset();
        let model = train_chain(&data, 2, &ChainTrainParams::default()).unwrap();
        for x in &data {
            let s = AcquisitionState::full(2, x.len());
            assert_eq!(model.predict(x, &s).unwrap(), *x.gold());
            // Tier 0 alone is also separable here.
            let z = AcquisitionState::zero(2, x.len());
            assert_eq!(model.predict(x, &z).unwrap(), *x.gold());
        }
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let data = separable_toyset();
        let params = ChainTrainParams { epochs: 5, ..Default::default() };
        let a = train_chain(&data, 2, &params).unwrap();
        let b = train_chain(&data, 2, &params).unwrap();
        assert_eq!(a, b);
        let c = train_chain(&data, 2, &ChainTrainParams { seed: 2, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_learning_rate_keeps_weights_zero() {
        let data = separable_toyset();
        let params = ChainTrainParams { learning_rate: 0.0, epochs: 3, ..Default::default() };
        let model = train_chain(&data, 2, &params).unwrap();
        assert!(model.unary.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(model.transitions.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_training_inputs() {
        assert!(train_chain(&[], 2, &ChainTrainParams::default()).is_err());
        let data = separable_toyset();
        assert!(train_chain(&data, 1, &ChainTrainParams::default()).is_err()); // label 1 out of range
        let params = ChainTrainParams { epochs: 0, ..Default::default() };
        assert!(train_chain(&data, 2, &params).is_err());
    }

    /// The lazy averaging must equal the mean of explicit per-visit snapshots.
    #[test]
    fn averaged_weights_equal_mean_of_snapshots() {
        let data = separable_toyset();
        let params = ChainTrainParams { epochs: 2, ..Default::default() };
        let averaged = train_chain(&data, 2, &params).unwrap();

        // Re-run the same schedule, collecting a full snapshot per visit.
        let tier_dims = data[0].tier_dims();
        let mut model = ChainModel::zeros(2, tier_dims.clone()).unwrap();
        let mut sums: Vec<Vec<f64>> = tier_dims.iter().map(|&d| vec![0.0; 2 * d]).collect();
        let mut trans_sum = vec![0.0; 4];
        let mut visits = 0u64;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let x = &data[i];
                let state = params.sampler.sample(&mut rng, 2, x.len());
                let predicted = model.predict(x, &state).unwrap();
                let gold = x.gold().clone();
                if predicted != gold {
                    for c in 0..x.len() {
                        let (yg, yp) = (gold.0[c], predicted.0[c]);
                        if yg != yp {
                            for k in 0..=state.active_tier(c) {
                                let dim = tier_dims[k];
                                let f = x.tier_features(c, k);
                                for j in 0..dim {
                                    model.unary[k][yg * dim + j] += params.learning_rate * f[j];
                                    model.unary[k][yp * dim + j] -= params.learning_rate * f[j];
                                }
                            }
                        }
                        if c > 0 {
                            let g = (gold.0[c - 1], yg);
                            let p = (predicted.0[c - 1], yp);
                            if g != p {
                                model.transitions[g.0 * 2 + g.1] += params.learning_rate;
                                model.transitions[p.0 * 2 + p.1] -= params.learning_rate;
                            }
                        }
                    }
                }
                visits += 1;
                for k in 0..2 {
                    for (s, w) in sums[k].iter_mut().zip(&model.unary[k]) {
                        *s += w;
                    }
                }
                for (s, w) in trans_sum.iter_mut().zip(&model.transitions) {
                    *s += w;
                }
            }
        }
        for k in 0..2 {
            for (s, a) in sums[k].iter().zip(&averaged.unary[k]) {
                assert!((s / visits as f64 - a).abs() < 1e-9);
            }
        }
        for (s, a) in trans_sum.iter().zip(&averaged.transitions) {
            assert!((s / visits as f64 - a).abs() < 1e-9);
        }
    }

    #[test]
    fn zeroed_expensive_tier_makes_state_irrelevant() {
        let data = separable_toyset();
        let mut model = train_chain(&data, 2, &ChainTrainParams::default()).unwrap();
        model.unary[1].iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in &data {
            let zero = AcquisitionState::zero(2, x.len());
            let base = model.predict(x, &zero).unwrap();
            for _ in 0..5 {
                let s = StateSampler::default().sample(&mut rng, 2, x.len());
                assert_eq!(model.predict(x, &s).unwrap(), base);
            }
        }
    }

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let data = separable_toyset();
        let model = train_chain(&data, 2, &ChainTrainParams { epochs: 3, ..Default::default() }).unwrap();
        let json = model.to_json().unwrap();
        let back = ChainModel::from_json(&json).unwrap();
        assert_eq!(model, back); // f64 round-trip through JSON is exact
        assert_eq!(json, back.to_json().unwrap());
        assert!(ChainModel::from_json("{\"format\":\"other\",\"version\":1,\"model\":null}").is_err());
    }
}
