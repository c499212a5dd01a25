//! Dataset access for the commands: read a file in the task's on-disk format
//! or generate the matching synthetic corpus, plus cost-schedule resolution.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use budgetsp::chain::GlyphSequence;
use budgetsp::data::{
    gen_synthetic_chain, gen_synthetic_treebank, load_conllu, load_ocr, parse_conllu,
    SyntheticChainConfig, SyntheticTreebankConfig,
};
use budgetsp::dep::Sentence;
use budgetsp::CostSchedule;
use serde::Serialize;

use crate::config::{usage, CostPresetArg, MetricArg, TaskArg};

pub enum Corpus {
    Chain(Vec<GlyphSequence>),
    Dep(Vec<Sentence>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Chain(xs) => xs.len(),
            Corpus::Dep(xs) => xs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_off(&mut self, at: usize) -> Corpus {
        match self {
            Corpus::Chain(xs) => Corpus::Chain(xs.split_off(at)),
            Corpus::Dep(xs) => Corpus::Dep(xs.split_off(at)),
        }
    }

    fn subset(self, skip: usize, take: Option<usize>) -> Corpus {
        let take = take.unwrap_or(usize::MAX);
        match self {
            Corpus::Chain(xs) => Corpus::Chain(xs.into_iter().skip(skip).take(take).collect()),
            Corpus::Dep(xs) => Corpus::Dep(xs.into_iter().skip(skip).take(take).collect()),
        }
    }
}

/// Fully resolved data source; also the manifest's description of the data.
#[derive(Clone, Debug, Serialize)]
pub struct DataSource {
    pub task: TaskArg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Examples dropped from the front before use (held-out splitting).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip: Option<usize>,
    /// Examples kept after skipping (held-out splitting).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub take: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SyntheticSpec {
    pub count: usize,
    pub seed: u64,
    pub noise: f64,
    pub hard: f64,
    pub alphabet: usize,
    pub pp: f64,
}

impl TaskArg {
    fn serialize_name(self) -> &'static str {
        match self {
            TaskArg::Chain => "chain",
            TaskArg::Dep => "dep",
        }
    }
}

impl serde::Serialize for TaskArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.serialize_name())
    }
}

impl DataSource {
    pub fn from_file(task: TaskArg, path: PathBuf) -> Self {
        DataSource { task, path: Some(path), synthetic: None, skip: None, take: None }
    }

    pub fn synthetic(task: TaskArg, spec: SyntheticSpec) -> Self {
        DataSource { task, path: None, synthetic: Some(spec), skip: None, take: None }
    }

    /// Input files to digest in the manifest (none for synthetic data).
    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.path.iter().cloned().collect()
    }

    pub fn load(&self) -> Result<Corpus> {
        let full = match (&self.path, &self.synthetic) {
            (Some(path), _) => load_file(self.task, path)?,
            (None, Some(spec)) => generate(self.task, spec)?,
            (None, None) => return Err(usage("no data source: pass --data or --synthetic")),
        };
        if self.skip.is_none() && self.take.is_none() {
            return Ok(full);
        }
        let total = full.len();
        let carved = full.subset(self.skip.unwrap_or(0), self.take);
        if carved.is_empty() {
            return Err(usage(format!(
                "--skip {}/--take {:?} left nothing of the {total}-example corpus",
                self.skip.unwrap_or(0),
                self.take
            )));
        }
        Ok(carved)
    }
}

fn load_file(task: TaskArg, path: &Path) -> Result<Corpus> {
    match task {
        TaskArg::Chain => {
            let data =
                load_ocr(path).with_context(|| format!("loading {}", path.display()))?;
            Ok(Corpus::Chain(data))
        }
        TaskArg::Dep => {
            let corpus =
                load_conllu(path).with_context(|| format!("loading {}", path.display()))?;
            for r in &corpus.rejected {
                eprintln!(
                    "warning: skipped sentence {} (line {}): {}",
                    r.sentence_index, r.line, r.reason
                );
            }
            Ok(Corpus::Dep(corpus.sentences))
        }
    }
}

fn generate(task: TaskArg, spec: &SyntheticSpec) -> Result<Corpus> {
    match task {
        TaskArg::Chain => {
            let data = gen_synthetic_chain(&SyntheticChainConfig {
                num_sequences: spec.count,
                len_range: (4, 8),
                alphabet: spec.alphabet,
                noise: spec.noise,
                hard_fraction: spec.hard,
                seed: spec.seed,
            })?;
            Ok(Corpus::Chain(data))
        }
        TaskArg::Dep => {
            let text = gen_synthetic_treebank(&SyntheticTreebankConfig {
                num_sentences: spec.count,
                pp_fraction: spec.pp,
                seed: spec.seed,
            })?;
            let corpus = parse_conllu(Cursor::new(text))?;
            Ok(Corpus::Dep(corpus.sentences))
        }
    }
}

/// Preset by task unless overridden: chain data prices only the HOG tier,
/// parsing uses the measured per-word preset.
pub fn resolve_sched(
    task: TaskArg,
    preset: Option<CostPresetArg>,
    tier_costs: Option<Vec<f64>>,
    inference_cost: Option<f64>,
    policy_cost: Option<f64>,
    hog_cost: f64,
) -> Result<CostSchedule> {
    let base = match preset {
        Some(CostPresetArg::Ocr) => CostSchedule::ocr(hog_cost),
        Some(CostPresetArg::PaperParse) => CostSchedule::paper_parse(),
        None => match task {
            TaskArg::Chain => CostSchedule::ocr(hog_cost),
            TaskArg::Dep => CostSchedule::paper_parse(),
        },
    };
    let sched = CostSchedule::new(
        tier_costs.unwrap_or(base.tier_costs),
        inference_cost.unwrap_or(base.inference_cost),
        policy_cost.unwrap_or(base.policy_cost),
    )?;
    Ok(sched)
}

pub fn default_metric(task: TaskArg) -> MetricArg {
    match task {
        TaskArg::Chain => MetricArg::LetterAccuracy,
        TaskArg::Dep => MetricArg::Uas,
    }
}
