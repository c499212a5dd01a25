//! Dataset ingestion and synthetic corpus generation.
//!
//! Two on-disk formats are supported: the tab-separated handwritten-letter
//! format (one row per letter: id, letter, next-id, word-id, position, fold,
//! then 128 binary pixel columns for a 16x8 image) and CoNLL-U for
//! dependency trees. Both loaders report malformed input with line numbers;
//! the CoNLL-U loader additionally rejects individual sentences whose head
//! assignments are not trees, without failing the rest of the file.
//!
//! Two generators build corpora where buying the expensive feature tier is
//! genuinely worth it on a knowable subset of parts:
//!
//! * [`gen_synthetic_chain`]: glyph sequences whose "hard" positions have
//!   their pixels randomized (destroying the cheap view) and carry a corner
//!   marker (so a policy can spot them), while the expensive tier is computed
//!   from the clean image and stays informative;
//! * [`gen_synthetic_treebank`]: sentences with a prepositional attachment
//!   that part-of-speech patterns cannot decide — only the preposition's
//!   word identity (an expensive-tier feature) disambiguates the head.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{extract_hog, extract_pixels, Glyph, GlyphSequence};
use crate::dep::{Sentence, Token};
use crate::state::{BudgetedExample, StructuredLabel};
use crate::util::derive_seed;
use crate::{Error, Result};

pub const OCR_ALPHABET: usize = 26;
pub const OCR_HEIGHT: usize = 16;
pub const OCR_WIDTH: usize = 8;

pub fn letter_label(ch: char) -> Result<usize> {
    if ch.is_ascii_lowercase() {
        Ok(ch as usize - 'a' as usize)
    } else {
        Err(Error::InvalidParameter(format!("letter must be a-z, got {ch:?}")))
    }
}

pub fn label_letter(label: usize) -> Result<char> {
    if label < OCR_ALPHABET {
        Ok((b'a' + label as u8) as char)
    } else {
        Err(Error::InvalidParameter(format!("label {label} outside the 26-letter alphabet")))
    }
}

// ---------------------------------------------------------------------------
// Handwritten-letter rows
// ---------------------------------------------------------------------------

fn bad_row(line: usize, message: impl Into<String>) -> Error {
    Error::DataFormat { line, message: message.into() }
}

/// Parses the tab-separated letter format. Letters are grouped by word id
/// and ordered by position; words are returned in ascending word-id order,
/// so loads are deterministic regardless of row order.
pub fn parse_ocr<R: BufRead>(reader: R) -> Result<Vec<GlyphSequence>> {
    struct Letter {
        position: u64,
        lineno: usize,
        label: usize,
        glyph: Glyph,
    }
    let mut words: BTreeMap<u64, Vec<Letter>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end().split('\t').collect();
        if cols.len() != 6 + OCR_HEIGHT * OCR_WIDTH {
            return Err(bad_row(
                lineno,
                format!("expected {} tab-separated columns, found {}", 6 + 128, cols.len()),
            ));
        }
        let label = {
            let field = cols[1];
            let mut chars = field.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => letter_label(c)
                    .map_err(|_| bad_row(lineno, format!("bad letter column {field:?}")))?,
                _ => return Err(bad_row(lineno, format!("bad letter column {field:?}"))),
            }
        };
        let word_id: u64 = cols[3]
            .parse()
            .map_err(|_| bad_row(lineno, format!("bad word id {:?}", cols[3])))?;
        let position: u64 = cols[4]
            .parse()
            .map_err(|_| bad_row(lineno, format!("bad position {:?}", cols[4])))?;
        let mut pixels = Vec::with_capacity(OCR_HEIGHT * OCR_WIDTH);
        for (i, col) in cols[6..].iter().enumerate() {
            match *col {
                "0" => pixels.push(0),
                "1" => pixels.push(1),
                other => {
                    return Err(bad_row(
                        lineno,
                        format!("pixel column {} must be 0 or 1, got {other:?}", i + 7),
                    ))
                }
            }
        }
        let glyph = Glyph::new(OCR_HEIGHT, OCR_WIDTH, pixels)
            .map_err(|e| bad_row(lineno, e.to_string()))?;
        words.entry(word_id).or_default().push(Letter { position, lineno, label, glyph });
    }
    let mut sequences = Vec::with_capacity(words.len());
    for (word_id, mut letters) in words {
        letters.sort_by_key(|l| l.position);
        for (i, letter) in letters.iter().enumerate() {
            if letter.position != i as u64 {
                return Err(bad_row(
                    letter.lineno,
                    format!("word {word_id} positions are not contiguous from 0"),
                ));
            }
        }
        let glyphs: Vec<Glyph> = letters.iter().map(|l| l.glyph.clone()).collect();
        let gold = StructuredLabel(letters.iter().map(|l| l.label).collect());
        sequences.push(GlyphSequence::from_glyphs(glyphs, gold)?);
    }
    Ok(sequences)
}

pub fn load_ocr(path: &Path) -> Result<Vec<GlyphSequence>> {
    let file = std::fs::File::open(path)?;
    parse_ocr(std::io::BufReader::new(file))
}

/// Writes sequences back out in the letter-row format. Row ids, next-ids,
/// and the fold column are synthesized (sequential ids, fold 0): only the
/// glyphs and letters round-trip.
pub fn write_ocr<W: Write>(sequences: &[GlyphSequence], mut out: W) -> Result<()> {
    let mut id: u64 = 1;
    for (word_id, seq) in sequences.iter().enumerate() {
        for part in 0..seq.len() {
            let last = part + 1 == seq.len();
            let next = if last { -1 } else { id as i64 + 1 };
            let letter = label_letter(seq.gold().0[part])?;
            write!(out, "{id}\t{letter}\t{next}\t{word_id}\t{part}\t0")?;
            let glyph = seq.glyph(part);
            for row in 0..glyph.height() {
                for col in 0..glyph.width() {
                    write!(out, "\t{}", glyph.get(row, col))?;
                }
            }
            writeln!(out)?;
            id += 1;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CoNLL-U
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConlluRejection {
    /// 1-based index of the sentence within the file.
    pub sentence_index: usize,
    /// Line number where the sentence starts.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ConlluCorpus {
    pub sentences: Vec<Sentence>,
    pub rejected: Vec<ConlluRejection>,
}

/// Parses CoNLL-U. Comment lines, multiword ranges (`1-2`) and empty nodes
/// (`1.1`) are skipped. A sentence whose heads are not a tree (self-heads,
/// cycles, out-of-range) is recorded in `rejected` instead of aborting the
/// load; hard format errors (wrong column count, unparsable head) still fail
/// with a line number.
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<ConlluCorpus> {
    let mut corpus = ConlluCorpus::default();
    let mut tokens: Vec<Token> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut sentence_index = 0usize;
    let mut sentence_start = 0usize;
    let flush = |tokens: &mut Vec<Token>,
                     heads: &mut Vec<usize>,
                     corpus: &mut ConlluCorpus,
                     sentence_index: &mut usize,
                     start: usize| {
        if tokens.is_empty() {
            return;
        }
        *sentence_index += 1;
        match Sentence::new(std::mem::take(tokens), StructuredLabel(std::mem::take(heads))) {
            Ok(s) => corpus.sentences.push(s),
            Err(e) => corpus.rejected.push(ConlluRejection {
                sentence_index: *sentence_index,
                line: start,
                reason: e.to_string(),
            }),
        }
    };
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut heads, &mut corpus, &mut sentence_index, sentence_start);
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() < 8 {
            return Err(bad_row(lineno, format!("expected >= 8 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue; // multiword token range or empty node
        }
        if tokens.is_empty() {
            sentence_start = lineno;
        }
        let expected: usize = tokens.len() + 1;
        let parsed: usize =
            id.parse().map_err(|_| bad_row(lineno, format!("bad token id {id:?}")))?;
        if parsed != expected {
            return Err(bad_row(lineno, format!("token id {parsed} out of order, expected {expected}")));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| bad_row(lineno, format!("bad head column {:?}", cols[6])))?;
        tokens.push(Token { form: cols[1].to_string(), upos: cols[3].to_string() });
        heads.push(head);
    }
    flush(&mut tokens, &mut heads, &mut corpus, &mut sentence_index, sentence_start);
    Ok(corpus)
}

pub fn load_conllu(path: &Path) -> Result<ConlluCorpus> {
    let file = std::fs::File::open(path)?;
    parse_conllu(std::io::BufReader::new(file))
}

/// Standard 10-column output; unused columns hold `_`.
pub fn write_conllu<W: Write>(sentences: &[Sentence], mut out: W) -> Result<()> {
    for sent in sentences {
        for (i, token) in sent.tokens().iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t_\t_\t_",
                i + 1,
                token.form,
                token.upos,
                sent.gold().0[i]
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic glyph chains
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticChainConfig {
    pub num_sequences: usize,
    /// Inclusive sequence length range.
    pub len_range: (usize, usize),
    pub alphabet: usize,
    /// Probability that a hard position's pixel is replaced by a coin flip.
    pub noise: f64,
    /// Probability that a position is hard.
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticChainConfig {
    fn default() -> Self {
        SyntheticChainConfig {
            num_sequences: 200,
            len_range: (4, 8),
            alphabet: 6,
            noise: 1.0,
            hard_fraction: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticChainConfig {
    fn validate(&self) -> Result<()> {
        if self.num_sequences == 0 {
            return Err(Error::InvalidParameter("need at least one sequence".into()));
        }
        if self.len_range.0 == 0 || self.len_range.0 > self.len_range.1 {
            return Err(Error::InvalidParameter(format!(
                "bad length range {:?}",
                self.len_range
            )));
        }
        if self.alphabet < 2 {
            return Err(Error::InvalidParameter("alphabet must have >= 2 labels".into()));
        }
        for (name, v) in [("noise", self.noise), ("hard_fraction", self.hard_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Pixels reserved for the hardness marker; prototypes keep them clear so a
/// marked glyph never collides with another label's clean image.
const MARKER_PIXELS: [(usize, usize); 2] = [(0, 0), (0, 1)];

/// Deterministic per-label prototype glyphs: dense random 16x8 patterns
/// (marker corner kept clear), distinct with overwhelming probability.
pub fn synthetic_prototypes(alphabet: usize, seed: u64) -> Vec<Glyph> {
    (0..alphabet)
        .map(|label| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, "chain-prototype", label as u64));
            let mut pixels = vec![0u8; OCR_HEIGHT * OCR_WIDTH];
            for (i, p) in pixels.iter_mut().enumerate() {
                let row = i / OCR_WIDTH;
                let col = i % OCR_WIDTH;
                if MARKER_PIXELS.contains(&(row, col)) {
                    continue;
                }
                *p = u8::from(rng.gen_bool(0.5));
            }
            Glyph::new(OCR_HEIGHT, OCR_WIDTH, pixels).unwrap()
        })
        .collect()
}

/// Generates sequences over prototype glyphs. Hard positions (chosen with
/// probability `hard_fraction`) have each pixel replaced by a fair coin flip
/// with probability `noise`, then get the corner marker; the cheap tier sees
/// the degraded image while the expensive tier is computed from the clean
/// prototype, so acquisition restores exactly the information noise removed.
pub fn gen_synthetic_chain(config: &SyntheticChainConfig) -> Result<Vec<GlyphSequence>> {
    config.validate()?;
    let prototypes = synthetic_prototypes(config.alphabet, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "chain-corpus", 0));
    let len_dist = Uniform::new_inclusive(config.len_range.0, config.len_range.1);
    let mut sequences = Vec::with_capacity(config.num_sequences);
    for _ in 0..config.num_sequences {
        let len = len_dist.sample(&mut rng);
        let mut glyphs = Vec::with_capacity(len);
        let mut feats = Vec::with_capacity(len);
        let mut gold = Vec::with_capacity(len);
        for _ in 0..len {
            let label = rng.gen_range(0..config.alphabet);
            let clean = &prototypes[label];
            let hard = rng.gen_bool(config.hard_fraction);
            let mut pixels: Vec<u8> = (0..OCR_HEIGHT * OCR_WIDTH)
                .map(|i| clean.get(i / OCR_WIDTH, i % OCR_WIDTH))
                .collect();
            if hard {
                for p in pixels.iter_mut() {
                    if rng.gen_bool(config.noise) {
                        *p = u8::from(rng.gen_bool(0.5));
                    }
                }
                for &(row, col) in &MARKER_PIXELS {
                    pixels[row * OCR_WIDTH + col] = 1;
                }
            }
            let degraded = Glyph::new(OCR_HEIGHT, OCR_WIDTH, pixels).unwrap();
            feats.push(vec![extract_pixels(&degraded), extract_hog(clean)]);
            glyphs.push(degraded);
            gold.push(label);
        }
        sequences.push(GlyphSequence::with_tier_features(
            glyphs,
            feats,
            StructuredLabel(gold),
        )?);
    }
    Ok(sequences)
}

// ---------------------------------------------------------------------------
// Synthetic treebank
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticTreebankConfig {
    pub num_sentences: usize,
    /// Fraction of sentences carrying the ambiguous prepositional phrase.
    pub pp_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticTreebankConfig {
    fn default() -> Self {
        SyntheticTreebankConfig { num_sentences: 600, pp_fraction: 0.8, seed: 11 }
    }
}

const SUBJECTS: [&str; 6] = ["committee", "panel", "board", "group", "team", "council"];
const VERBS: [&str; 6] = ["held", "saw", "moved", "found", "kept", "took"];
const OBJECTS: [&str; 6] = ["meeting", "report", "window", "plan", "draft", "review"];
const ADJECTIVES: [&str; 4] = ["long", "brief", "final", "open"];
const DETERMINERS: [&str; 2] = ["the", "a"];
/// Prepositions whose phrase modifies the verb...
const VERB_ADPS: [&str; 4] = ["during", "despite", "until", "before"];
/// ...and prepositions whose phrase modifies the object noun. Same POS tag,
/// opposite gold attachment: part-of-speech features alone cannot tell them
/// apart.
const NOUN_ADPS: [&str; 4] = ["about", "regarding", "concerning", "toward"];
const PP_NOUNS: [&str; 6] = ["lunch", "noon", "budget", "merger", "winter", "protest"];

/// Builds sentences of the shape `DET subj VERB DET [ADJ] obj [ADP ppnoun]`.
/// Every attachment is decidable from POS patterns except the preposition's:
/// half the prepositions attach to the verb, half to the object noun, and
/// which is which is keyed to the preposition's identity alone. Returns
/// CoNLL-U text (feed it to [`parse_conllu`]).
pub fn gen_synthetic_treebank(config: &SyntheticTreebankConfig) -> Result<String> {
    if config.num_sentences == 0 {
        return Err(Error::InvalidParameter("need at least one sentence".into()));
    }
    if !(0.0..=1.0).contains(&config.pp_fraction) {
        return Err(Error::InvalidParameter(format!(
            "pp_fraction must be in [0,1], got {}",
            config.pp_fraction
        )));
    }
    fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
        words[rng.gen_range(0..words.len())]
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "treebank", 0));
    let mut sentences = Vec::with_capacity(config.num_sentences);
    for _ in 0..config.num_sentences {
        let mut tokens: Vec<Token> = Vec::new();
        let mut heads: Vec<usize> = Vec::new();
        let push = |tokens: &mut Vec<Token>, heads: &mut Vec<usize>, form: &str, upos: &str, head: usize| {
            tokens.push(Token { form: form.to_string(), upos: upos.to_string() });
            heads.push(head);
        };
        // DET subj: determiner attaches forward to its noun.
        let det1 = pick(&mut rng, &DETERMINERS);
        let subj = pick(&mut rng, &SUBJECTS);
        push(&mut tokens, &mut heads, det1, "DET", 2);
        push(&mut tokens, &mut heads, subj, "NOUN", 3);
        // VERB is the root.
        let verb = pick(&mut rng, &VERBS);
        push(&mut tokens, &mut heads, verb, "VERB", 0);
        // DET [ADJ] obj: object noun attaches to the verb.
        let with_adj = rng.gen_bool(0.5);
        let obj_index = if with_adj { 6 } else { 5 };
        push(&mut tokens, &mut heads, pick(&mut rng, &DETERMINERS), "DET", obj_index);
        if with_adj {
            push(&mut tokens, &mut heads, pick(&mut rng, &ADJECTIVES), "ADJ", obj_index);
        }
        push(&mut tokens, &mut heads, pick(&mut rng, &OBJECTS), "NOUN", 3);
        // Optional ambiguous PP: ADP ppnoun.
        if rng.gen_bool(config.pp_fraction) {
            let to_verb = rng.gen_bool(0.5);
            let adp = if to_verb {
                pick(&mut rng, &VERB_ADPS)
            } else {
                pick(&mut rng, &NOUN_ADPS)
            };
            let adp_index = tokens.len() + 1;
            let head = if to_verb { 3 } else { obj_index };
            push(&mut tokens, &mut heads, adp, "ADP", head);
            push(&mut tokens, &mut heads, pick(&mut rng, &PP_NOUNS), "NOUN", adp_index);
        }
        sentences.push(Sentence::new(tokens, StructuredLabel(heads))?);
    }
    let mut out = Vec::new();
    write_conllu(&sentences, &mut out)?;
    Ok(String::from_utf8(out).expect("generated text is ASCII"))
}
