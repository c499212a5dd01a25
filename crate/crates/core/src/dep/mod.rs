//! Arc-factored dependency parsing with a cheap POS tier and an expensive
//! lexicalized tier.
//!
//! Edge scores are sums of hashed template firings. Tier 0 fires part-of-
//! speech patterns (POS pairs with direction and distance, +-1 POS context);
//! tier 1 additionally fires word forms, word+POS conjunctions, head-dependent
//! lexical pairs, and in-between POS patterns. Firings live in per-tier weight
//! blocks with the owning tier folded into the hash key, so tiers never
//! collide. Which tier an edge is scored with is decided by the acquisition
//! state at the *head* word (the artificial root is always cheap); a config
//! flag switches the gate to the dependent instead.
//!
//! Decoding is a maximum spanning arborescence (module [`cle`]); training is
//! the same randomized-state averaged perceptron as for chains.

pub mod cle;

pub use cle::{cle_mst, is_valid_tree, ScoreMatrix};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::state::{
    AcquisitionState, BudgetedExample, MarginPredictor, Predictor, StateSampler, StructuredLabel,
};
use crate::util::Fnv;
use crate::{Error, Result};

/// One word of a sentence: surface form plus part-of-speech tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub upos: String,
}

/// A sentence with gold dependency heads. `gold().0[c]` is the head of word
/// `c + 1`, with 0 denoting the artificial root.
#[derive(Clone, Debug)]
pub struct Sentence {
    tokens: Vec<Token>,
    gold_heads: StructuredLabel,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, gold_heads: StructuredLabel) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("sentence with no tokens"));
        }
        if gold_heads.len() != tokens.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens but {} heads",
                tokens.len(),
                gold_heads.len()
            )));
        }
        if !is_valid_tree(&gold_heads) {
            return Err(Error::InvalidParameter(format!(
                "gold heads {:?} do not form a tree over the root",
                gold_heads.0
            )));
        }
        Ok(Sentence { tokens, gold_heads })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &Token {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// POS string of sentence position `p` where 0 is the root; positions
    /// outside the sentence map to boundary sentinels.
    pub(crate) fn pos_at(&self, p: isize) -> &str {
        if p == 0 {
            "ROOT"
        } else if p < 0 {
            "<s>"
        } else if p as usize > self.tokens.len() {
            "</s>"
        } else {
            &self.tokens[p as usize - 1].upos
        }
    }

    fn form_at(&self, p: usize) -> &str {
        if p == 0 {
            "<root>"
        } else {
            &self.tokens[p - 1].form
        }
    }
}

impl BudgetedExample for Sentence {
    fn num_parts(&self) -> usize {
        self.tokens.len()
    }

    fn gold(&self) -> &StructuredLabel {
        &self.gold_heads
    }
}

fn distance_bucket(h: usize, d: usize) -> u64 {
    let dist = h.abs_diff(d);
    match dist {
        0..=5 => dist as u64,
        6..=10 => 6,
        _ => 7,
    }
}

fn direction(h: usize, d: usize) -> u64 {
    u64::from(h > d)
}

/// Template firings of edge `head -> dep` that are *owned* by `tier`.
/// The cumulative firing set of an edge gated at tier `t` is the union of
/// `firings_owned_by(k)` for `k <= t`.
fn firings_owned_by(sent: &Sentence, head: usize, dep: usize, tier: usize, out: &mut Vec<u64>) {
    let dir = direction(head, dep);
    let dist = distance_bucket(head, dep);
    let t = tier as u64;
    let key = |tag: &[u8]| Fnv::new().num(t).bytes(tag).num(dir).num(dist);
    let pos = |p: isize| sent.pos_at(p).as_bytes();
    let (h, d) = (head as isize, dep as isize);
    match tier {
        0 => {
            out.push(key(b"pp").bytes(pos(h)).bytes(pos(d)).finish());
            out.push(key(b"hp").bytes(pos(h)).finish());
            out.push(key(b"dp").bytes(pos(d)).finish());
            out.push(key(b"c1").bytes(pos(h)).bytes(pos(h + 1)).bytes(pos(d - 1)).bytes(pos(d)).finish());
            out.push(key(b"c2").bytes(pos(h - 1)).bytes(pos(h)).bytes(pos(d - 1)).bytes(pos(d)).finish());
            out.push(key(b"c3").bytes(pos(h)).bytes(pos(h + 1)).bytes(pos(d)).bytes(pos(d + 1)).finish());
            out.push(key(b"c4").bytes(pos(h - 1)).bytes(pos(h)).bytes(pos(d)).bytes(pos(d + 1)).finish());
        }
        1 => {
            let hw = sent.form_at(head).as_bytes();
            let dw = sent.form_at(dep).as_bytes();
            out.push(key(b"hw").bytes(hw).finish());
            out.push(key(b"dw").bytes(dw).finish());
            out.push(key(b"hwp").bytes(hw).bytes(pos(h)).finish());
            out.push(key(b"dwp").bytes(dw).bytes(pos(d)).finish());
            out.push(key(b"ww").bytes(hw).bytes(dw).finish());
            out.push(key(b"wp").bytes(hw).bytes(pos(d)).finish());
            out.push(key(b"pw").bytes(pos(h)).bytes(dw).finish());
            let (lo, hi) = (head.min(dep), head.max(dep));
            for b in lo + 1..hi {
                out.push(key(b"btw").bytes(pos(h)).bytes(pos(b as isize)).bytes(pos(d)).finish());
            }
        }
        _ => {}
    }
}

/// Cumulative firing set of an edge at a gate tier: all firings owned by
/// tiers `0..=tier`, each id namespaced by its owning tier. Errors on
/// structurally forbidden edges (self-loops, edges into the root, out-of-range
/// nodes).
pub fn edge_features(sent: &Sentence, head: usize, dep: usize, tier: usize) -> Result<Vec<(usize, u64)>> {
    let n = sent.len();
    if head > n || dep == 0 || dep > n || head == dep {
        return Err(Error::InvalidParameter(format!(
            "edge ({head} -> {dep}) is not valid in a sentence of {n} words"
        )));
    }
    let mut out = Vec::new();
    for k in 0..=tier {
        let mut ids = Vec::new();
        firings_owned_by(sent, head, dep, k, &mut ids);
        out.extend(ids.into_iter().map(|id| (k, id)));
    }
    Ok(out)
}

/// Per-sentence cache of all edge firings, grouped by owning tier, so that
/// training epochs do not recompute template hashes.
pub struct EdgeFirings {
    n: usize,
    /// `per_tier[k][h * (n + 1) + d]` = firings of edge `(h, d)` owned by `k`.
    per_tier: Vec<Vec<Vec<u64>>>,
}

impl EdgeFirings {
    pub fn build(sent: &Sentence, num_tiers: usize) -> Self {
        let n = sent.len();
        let side = n + 1;
        let mut per_tier = vec![vec![Vec::new(); side * side]; num_tiers];
        for h in 0..=n {
            for d in 1..=n {
                if h == d {
                    continue;
                }
                for (k, slot) in per_tier.iter_mut().enumerate() {
                    firings_owned_by(sent, h, d, k, &mut slot[h * side + d]);
                }
            }
        }
        EdgeFirings { n, per_tier }
    }

    fn firings(&self, tier: usize, head: usize, dep: usize) -> &[u64] {
        &self.per_tier[tier][head * (self.n + 1) + dep]
    }
}

/// Arc-factored parser with one hashed weight block per feature tier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepModel {
    num_tiers: usize,
    /// Buckets per tier block; firing ids are folded with `id % tier_dim`.
    tier_dim: usize,
    weights: Vec<Vec<f64>>,
    /// Gate edges on the dependent's acquisition state instead of the head's.
    gate_on_dependent: bool,
}

const DEP_MODEL_FORMAT: &str = "budgetsp-dep-model";
const DEP_MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedDepModel {
    format: String,
    version: u32,
    model: DepModel,
}

impl DepModel {
    pub fn zeros(num_tiers: usize, tier_dim: usize, gate_on_dependent: bool) -> Result<Self> {
        if num_tiers == 0 {
            return Err(Error::EmptyInput("parser with no feature tiers"));
        }
        if tier_dim == 0 {
            return Err(Error::InvalidParameter("tier_dim must be >= 1".into()));
        }
        Ok(DepModel {
            num_tiers,
            tier_dim,
            weights: vec![vec![0.0; tier_dim]; num_tiers],
            gate_on_dependent,
        })
    }

    pub fn tier_dim(&self) -> usize {
        self.tier_dim
    }

    pub fn weights_mut(&mut self, tier: usize) -> &mut [f64] {
        &mut self.weights[tier]
    }

    pub fn bucket(&self, id: u64) -> usize {
        (id % self.tier_dim as u64) as usize
    }

    /// Gate tier of edge `(head, dep)` under `state`: the head word's active
    /// tier (root edges are always cheap), or the dependent's when configured.
    fn gate_tier(&self, state: &AcquisitionState, head: usize, dep: usize) -> usize {
        let word = if self.gate_on_dependent { dep } else { head };
        if word == 0 {
            0
        } else {
            state.active_tier(word - 1)
        }
    }

    fn score_firings(&self, firings: &EdgeFirings, head: usize, dep: usize, gate: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..=gate.min(self.num_tiers - 1) {
            for &id in firings.firings(k, head, dep) {
                s += self.weights[k][self.bucket(id)];
            }
        }
        s
    }

    /// Dense edge scores for `sent` under `state`. Diagonal and into-root
    /// entries stay `-inf`. Flipping the state of word `i` changes row `i`
    /// only (or column `i` when gating on dependents).
    pub fn edge_score_matrix(&self, sent: &Sentence, state: &AcquisitionState) -> Result<ScoreMatrix> {
        self.check_state(sent, state)?;
        let firings = EdgeFirings::build(sent, self.num_tiers);
        Ok(self.score_matrix_cached(&firings, state))
    }

    fn score_matrix_cached(&self, firings: &EdgeFirings, state: &AcquisitionState) -> ScoreMatrix {
        let n = firings.n;
        let mut m = ScoreMatrix::new(n);
        for h in 0..=n {
            for d in 1..=n {
                if h == d {
                    continue;
                }
                let gate = self.gate_tier(state, h, d);
                m.set(h, d, self.score_firings(firings, h, d, gate));
            }
        }
        m
    }

    fn check_state(&self, sent: &Sentence, state: &AcquisitionState) -> Result<()> {
        if state.num_tiers() != self.num_tiers || state.num_parts() != sent.len() {
            return Err(Error::DimensionMismatch(format!(
                "state is {}x{}, expected {}x{}",
                state.num_tiers(),
                state.num_parts(),
                self.num_tiers,
                sent.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let v = VersionedDepModel {
            format: DEP_MODEL_FORMAT.into(),
            version: DEP_MODEL_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string(&v)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: VersionedDepModel = serde_json::from_str(s)?;
        if v.format != DEP_MODEL_FORMAT || v.version != DEP_MODEL_VERSION {
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

impl Predictor for DepModel {
    type Example = Sentence;

    fn num_tiers(&self) -> usize {
        self.num_tiers
    }

    fn predict(&self, x: &Sentence, state: &AcquisitionState) -> Result<StructuredLabel> {
        let m = self.edge_score_matrix(x, state)?;
        cle_mst(&m)
    }
}

impl MarginPredictor for DepModel {
    /// Confidence = mean over dependents of (best head score - second-best
    /// head score). A one-word sentence has no competing head and reports
    /// infinite confidence.
    fn confidence(&self, x: &Sentence, state: &AcquisitionState) -> Result<f64> {
        let m = self.edge_score_matrix(x, state)?;
        let n = x.len();
        let mut total = 0.0;
        for d in 1..=n {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for h in 0..=n {
                if h == d {
                    continue;
                }
                let s = m.get(h, d);
                if s > best {
                    second = best;
                    best = s;
                } else if s > second {
                    second = s;
                }
            }
            total += best - second; // inf when only one candidate head exists
        }
        Ok(total / n as f64)
    }
}

/// Training knobs for the parser perceptron (same scheme as chains).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DepTrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub sampler: StateSampler,
    pub num_tiers: usize,
    pub tier_dim: usize,
    pub gate_on_dependent: bool,
}

impl Default for DepTrainParams {
    fn default() -> Self {
        DepTrainParams {
            epochs: 50,
            learning_rate: 0.1,
            seed: 1,
            sampler: StateSampler::default(),
            num_tiers: 2,
            tier_dim: 1 << 16,
            gate_on_dependent: false,
        }
    }
}

/// Averaged structured perceptron over spanning-tree decodes, each visit under
/// a freshly sampled acquisition state. Mistaken edges update only the firings
/// active at each edge's gate tier. Deterministic given the seed.
pub fn train_dep(data: &[Sentence], params: &DepTrainParams) -> Result<DepModel> {
    if params.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be >= 1".into()));
    }
    if !params.learning_rate.is_finite() || params.learning_rate < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be finite and >= 0, got {}",
            params.learning_rate
        )));
    }
    params.sampler.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("parser training set"));
    }

    let mut model = DepModel::zeros(params.num_tiers, params.tier_dim, params.gate_on_dependent)?;
    let caches: Vec<EdgeFirings> =
        data.iter().map(|s| EdgeFirings::build(s, params.num_tiers)).collect();

    // Lazily-averaged weights, one clock shared across tiers.
    let mut acc = vec![vec![0.0f64; params.tier_dim]; params.num_tiers];
    let mut stamp = vec![vec![0u64; params.tier_dim]; params.num_tiers];
    let mut now = 0u64;
    let lr = params.learning_rate;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let sent = &data[i];
            let state = params.sampler.sample(&mut rng, params.num_tiers, sent.len());
            let matrix = model.score_matrix_cached(&caches[i], &state);
            let predicted = cle_mst(&matrix)?;
            let gold = sent.gold();
            if predicted != *gold {
                let mut bump = |model: &mut DepModel, head: usize, dep: usize, delta: f64| {
                    let gate = model.gate_tier(&state, head, dep);
                    for k in 0..=gate.min(params.num_tiers - 1) {
                        for &id in caches[i].firings(k, head, dep) {
                            let b = model.bucket(id);
                            acc[k][b] += model.weights[k][b] * (now - stamp[k][b]) as f64;
                            stamp[k][b] = now;
                            model.weights[k][b] += delta;
                        }
                    }
                };
                for d in 1..=sent.len() {
                    let (hg, hp) = (gold.0[d - 1], predicted.0[d - 1]);
                    if hg != hp {
                        bump(&mut model, hg, d, lr);
                        bump(&mut model, hp, d, -lr);
                    }
                }
            }
            now += 1;
        }
    }

    let total = now.max(1) as f64;
    for k in 0..params.num_tiers {
        for b in 0..params.tier_dim {
            acc[k][b] += model.weights[k][b] * (now - stamp[k][b]) as f64;
            model.weights[k][b] = acc[k][b] / total;
        }
    }
    Ok(model)
}
