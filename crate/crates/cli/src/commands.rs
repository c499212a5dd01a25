//! The five subcommand bodies. Each one resolves its effective settings
//! (flag wins over config field wins over default), loads or generates the
//! data, runs the matching library stage, writes the artifact, and drops a
//! manifest beside it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use budgetsp::chain::{train_chain, ChainModel, ChainTrainParams, GlyphSequence};
use budgetsp::dep::{train_dep, DepModel, DepTrainParams, Sentence};
use budgetsp::oracle::{
    exhaustive_pseudo_label, parsimonious_search, trajectory_search, PseudoLabel, SearchKind,
};
use budgetsp::policy::{
    build_oneshot_rows, build_oof_predictions, dump_rows_jsonl, train_anytime, train_oneshot,
    AnytimeParams, AnytimePolicy, OneShotParams, OneShotPolicy, PolicyInstrumented,
};
use budgetsp::runtime::{
    evaluate, run_anytime, run_fixed_state, run_myopic, run_oneshot, run_uniform, write_eval_csv,
    EvalCsvRow, ExecutionTrace, Metric,
};
use budgetsp::sweep::{run_sweep, write_sweep_csv, SweepConfig, SweepTask};
use budgetsp::{
    AcquisitionState, BudgetedExample, CostSchedule, MarginPredictor, ModifiedLossParams,
    Predictor, StateSampler,
};

use crate::config::{
    data_error, parse_f64_list, usage, FileConfig, FixedPolicyArg, LossArg, PolicyKindArg,
    SearchArg, TaskArg,
};
use crate::corpus::{default_metric, resolve_sched, Corpus, DataSource, SyntheticSpec};
use crate::manifest::write_manifest;
use crate::{
    CostFlags, DataFlags, EvalArgs, OracleFlags, PredictorFlags, PseudoLabelsArgs, SweepArgs,
    TrainPolicyArgs, TrainPredictorArgs,
};

// ---------------------------------------------------------------------------
// Settings resolution (flag > config field > default)
// ---------------------------------------------------------------------------

fn resolve_source(flags: &DataFlags, cfg: &FileConfig) -> Result<DataSource> {
    let task = flags
        .task
        .or(cfg.task)
        .ok_or_else(|| usage("--task is required (chain or dep)"))?;
    if flags.data.is_some() && flags.synthetic {
        return Err(usage("--data and --synthetic are mutually exclusive"));
    }
    let use_synthetic =
        flags.synthetic || (flags.data.is_none() && cfg.data.is_none() && cfg.synthetic == Some(true));
    let mut source = if use_synthetic {
        let spec = SyntheticSpec {
            count: flags.synthetic_count.or(cfg.synthetic_count).unwrap_or(200),
            seed: flags.synthetic_seed.or(cfg.synthetic_seed).unwrap_or(0),
            noise: flags.synthetic_noise.or(cfg.synthetic_noise).unwrap_or(1.0),
            hard: flags.synthetic_hard.or(cfg.synthetic_hard).unwrap_or(0.3),
            alphabet: flags.synthetic_alphabet.or(cfg.synthetic_alphabet).unwrap_or(6),
            pp: flags.synthetic_pp.or(cfg.synthetic_pp).unwrap_or(0.3),
        };
        DataSource::synthetic(task, spec)
    } else if let Some(path) = flags.data.clone().or_else(|| cfg.data.clone()) {
        DataSource::from_file(task, path)
    } else {
        return Err(usage("no data source: pass --data FILE or --synthetic"));
    };
    source.skip = flags.skip.or(cfg.skip);
    source.take = flags.take.or(cfg.take);
    Ok(source)
}

/// Predictor hyperparameters shared by every command that fits a model.
#[derive(Clone, Serialize)]
struct PredictorSettings {
    epochs: usize,
    learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alphabet: Option<usize>,
    tier_dim: usize,
    gate_on_dependent: bool,
    seed: u64,
}

fn resolve_predictor(flags: &PredictorFlags, cfg: &FileConfig, seed: u64) -> PredictorSettings {
    PredictorSettings {
        epochs: flags.epochs.or(cfg.epochs).unwrap_or(50),
        learning_rate: flags.learning_rate.or(cfg.learning_rate).unwrap_or(0.1),
        alphabet: flags.alphabet.or(cfg.alphabet),
        tier_dim: flags.tier_dim.or(cfg.tier_dim).unwrap_or(1 << 16),
        gate_on_dependent: flags.gate_on_dependent || cfg.gate_on_dependent.unwrap_or(false),
        seed,
    }
}

impl PredictorSettings {
    /// Chain label-alphabet size: explicit flag, else the synthetic corpus's
    /// own alphabet, else the 26 lowercase letters of the file format.
    fn chain_alphabet(&self, source: &DataSource) -> usize {
        self.alphabet
            .unwrap_or_else(|| source.synthetic.as_ref().map_or(26, |s| s.alphabet))
    }

    fn chain_params(&self) -> ChainTrainParams {
        ChainTrainParams {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
            sampler: StateSampler::default(),
        }
    }

    fn dep_params(&self) -> DepTrainParams {
        DepTrainParams {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
            tier_dim: self.tier_dim,
            gate_on_dependent: self.gate_on_dependent,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Serialize)]
struct OracleSettings {
    search: SearchArg,
    lambda: f64,
    loss: LossArg,
    tau: f64,
}

impl Serialize for SearchArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_kind().serialize(s)
    }
}

impl Serialize for LossArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_kind().serialize(s)
    }
}

fn resolve_oracle(flags: &OracleFlags, cfg: &FileConfig) -> OracleSettings {
    OracleSettings {
        search: flags.search.or(cfg.search).unwrap_or(SearchArg::Trajectory),
        lambda: flags.lambda.or(cfg.lambda).unwrap_or(0.0),
        loss: flags.loss.or(cfg.loss).unwrap_or(LossArg::Hamming),
        tau: flags.tau.or(cfg.tau).unwrap_or(0.0),
    }
}

fn resolve_costs(flags: &CostFlags, cfg: &FileConfig, task: TaskArg) -> Result<CostSchedule> {
    let tier_costs = match &flags.tier_costs {
        Some(s) => Some(parse_f64_list(s, "--tier-costs")?),
        None => cfg.tier_costs.clone(),
    };
    resolve_sched(
        task,
        flags.cost_preset.or(cfg.cost_preset),
        tier_costs,
        flags.inference_cost.or(cfg.inference_cost),
        flags.policy_cost.or(cfg.policy_cost),
        flags.hog_cost.or(cfg.hog_cost).unwrap_or(1.0),
    )
}

fn parse_list_flag(
    flag_value: &Option<String>,
    cfg_value: &Option<Vec<f64>>,
    flag: &str,
) -> Result<Option<Vec<f64>>> {
    match flag_value {
        Some(s) => Ok(Some(parse_f64_list(s, flag)?)),
        None => Ok(cfg_value.clone()),
    }
}

/// Splitmix-style mixer: decorrelates per-example RNG streams drawn from one
/// user-facing seed.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_chain_model(path: &Path) -> Result<ChainModel> {
    ChainModel::load(path).map_err(|e| data_error(format!("model file {}: {e}", path.display())))
}

fn load_dep_model(path: &Path) -> Result<DepModel> {
    DepModel::load(path).map_err(|e| data_error(format!("model file {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// train-predictor
// ---------------------------------------------------------------------------

pub fn train_predictor(args: TrainPredictorArgs, cfg: &FileConfig) -> Result<()> {
    let source = resolve_source(&args.data, cfg)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let settings = resolve_predictor(&args.predictor, cfg, seed);
    let corpus = source.load()?;
    let n = corpus.len();
    let task_detail = match &corpus {
        Corpus::Chain(xs) => {
            let alphabet = settings.chain_alphabet(&source);
            let model = train_chain(xs, alphabet, &settings.chain_params())?;
            model.save(&args.out)?;
            json!({ "alphabet": alphabet })
        }
        Corpus::Dep(xs) => {
            let model = train_dep(xs, &settings.dep_params())?;
            model.save(&args.out)?;
            json!({ "tier_dim": settings.tier_dim, "gate_on_dependent": settings.gate_on_dependent })
        }
    };
    let config = json!({
        "data": source,
        "predictor": settings,
        "task_detail": task_detail,
    });
    let manifest = write_manifest(
        "train-predictor",
        config,
        &source.input_paths(),
        std::slice::from_ref(&args.out),
    )?;
    println!("trained predictor on {n} examples -> {}", args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pseudo-labels
// ---------------------------------------------------------------------------

/// One JSON line per example: the searched acquisition target, its importance
/// weight, and (for trajectory dumps) the greedy path of states and losses.
#[derive(Serialize)]
struct PseudoLabelRecord {
    example: usize,
    target: AcquisitionState,
    weight: f64,
    achieved_loss: f64,
    search: SearchKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    states: Option<Vec<AcquisitionState>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    losses: Option<Vec<f64>>,
}

fn search_label<X, P>(
    kind: SearchKind,
    tau: f64,
    x: &X,
    predictor: &P,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
) -> budgetsp::Result<PseudoLabel>
where
    X: BudgetedExample,
    P: Predictor<Example = X>,
{
    match kind {
        SearchKind::Exhaustive => exhaustive_pseudo_label(x, x.gold(), predictor, params, sched),
        SearchKind::Trajectory => {
            trajectory_search(x, x.gold(), predictor, params, sched).map(|(label, _)| label)
        }
        SearchKind::Parsimonious => parsimonious_search(x, x.gold(), predictor, params, sched, tau),
    }
}

fn label_records<X, P>(
    data: &[X],
    predictor: &P,
    kind: SearchKind,
    tau: f64,
    params: &ModifiedLossParams,
    sched: &CostSchedule,
    dump_trajectory: bool,
) -> budgetsp::Result<Vec<PseudoLabelRecord>>
where
    X: BudgetedExample + Sync,
    P: Predictor<Example = X> + Sync,
{
    data.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (label, trajectory) = if kind == SearchKind::Trajectory {
                let (label, t) = trajectory_search(x, x.gold(), predictor, params, sched)?;
                (label, dump_trajectory.then_some(t))
            } else {
                (search_label(kind, tau, x, predictor, params, sched)?, None)
            };
            Ok(PseudoLabelRecord {
                example: i,
                target: label.target,
                weight: label.weight,
                achieved_loss: label.achieved_loss,
                search: label.search,
                states: trajectory.as_ref().map(|t| t.states.clone()),
                losses: trajectory.map(|t| t.losses),
            })
        })
        .collect()
}

pub fn pseudo_labels(args: PseudoLabelsArgs, cfg: &FileConfig) -> Result<()> {
    let source = resolve_source(&args.data, cfg)?;
    let oracle = resolve_oracle(&args.oracle, cfg);
    if args.dump_trajectory && oracle.search != SearchArg::Trajectory {
        return Err(usage("--dump-trajectory requires --search trajectory"));
    }
    let sched = resolve_costs(&args.costs, cfg, source.task)?;
    let loss_params = ModifiedLossParams::new(oracle.loss.to_kind(), oracle.lambda)?;
    let corpus = source.load()?;
    let records = match &corpus {
        Corpus::Chain(xs) => {
            let model = load_chain_model(&args.model)?;
            label_records(
                xs,
                &model,
                oracle.search.to_kind(),
                oracle.tau,
                &loss_params,
                &sched,
                args.dump_trajectory,
            )?
        }
        Corpus::Dep(xs) => {
            let model = load_dep_model(&args.model)?;
            label_records(
                xs,
                &model,
                oracle.search.to_kind(),
                oracle.tau,
                &loss_params,
                &sched,
                args.dump_trajectory,
            )?
        }
    };
    let mut out = create_out(&args.out)?;
    for record in &records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let config = json!({
        "data": source,
        "model": args.model,
        "oracle": oracle,
        "costs": sched,
        "dump_trajectory": args.dump_trajectory,
    });
    let mut inputs = source.input_paths();
    inputs.push(args.model.clone());
    let manifest =
        write_manifest("pseudo-labels", config, &inputs, std::slice::from_ref(&args.out))?;
    let mean_bits = records.iter().map(|r| r.target.count_ones()).sum::<usize>() as f64
        / records.len() as f64;
    println!(
        "wrote {} pseudo-label records (mean {:.2} acquired bits) -> {}",
        records.len(),
        mean_bits,
        args.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-policy
// ---------------------------------------------------------------------------

/// Everything the policy trainer needs beyond the data and fold predictors.
struct PolicySettings {
    kind: PolicyKindArg,
    search: SearchKind,
    tau: f64,
    n_folds: usize,
    seed: u64,
    policy_epochs: Option<usize>,
    reg: Option<f64>,
    t0: Option<f64>,
    class_weights: Option<Vec<f64>>,
    use_importance_weights: bool,
    epochs_per_step: Option<usize>,
}

fn train_policy_generic<X, P>(
    data: &[X],
    train_fn: impl FnMut(&[usize]) -> budgetsp::Result<P>,
    loss_params: &ModifiedLossParams,
    sched: &CostSchedule,
    s: &PolicySettings,
    rows_out: Option<&Path>,
    out: &Path,
) -> Result<(String, serde_json::Value)>
where
    X: PolicyInstrumented + Sync,
    P: Predictor<Example = X> + Sync,
{
    let oof = build_oof_predictions(data.len(), s.n_folds, s.seed, train_fn)?;
    let num_tiers = oof.predictors[0].num_tiers();
    match s.kind {
        PolicyKindArg::Oneshot => {
            let labels: Vec<PseudoLabel> = data
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    search_label(s.search, s.tau, x, oof.predictor_for(i), loss_params, sched)
                })
                .collect::<budgetsp::Result<_>>()?;
            let rows = build_oneshot_rows(data, &labels, Some(&oof.fold_of))?;
            if let Some(path) = rows_out {
                dump_rows_jsonl(&rows, create_out(path)?)?;
            }
            let mut params = OneShotParams::new(num_tiers);
            params.seed = s.seed;
            params.use_importance_weights = s.use_importance_weights;
            if let Some(e) = s.policy_epochs {
                params.epochs = e;
            }
            if let Some(r) = s.reg {
                params.reg = r;
            }
            if let Some(t) = s.t0 {
                params.t0 = t;
            }
            if let Some(cw) = &s.class_weights {
                params.class_weights = cw.clone();
            }
            let (policy, report) = train_oneshot(&rows, num_tiers, data[0].cheap_dim(), &params)?;
            if report.degenerate {
                eprintln!(
                    "warning: every training row carried zero weight; the trained policy never acquires"
                );
            }
            policy.save(out)?;
            let stats = format!(
                "one-shot policy from {} rows ({} skipped)",
                report.rows_used, report.rows_skipped
            );
            Ok((stats, json!({ "oneshot": params })))
        }
        PolicyKindArg::Anytime => {
            let params = AnytimeParams {
                epochs_per_step: s.epochs_per_step.unwrap_or(20),
                reg: s.reg.unwrap_or(1e-3),
                t0: s.t0.unwrap_or(1.0),
                seed: s.seed,
            };
            let (policy, report) = train_anytime(data, &oof, loss_params, sched, &params)?;
            policy.save(out)?;
            let stats = format!(
                "anytime policy with {} step scorers (first-step live examples: {})",
                policy.num_steps(),
                report.step_live_counts.first().copied().unwrap_or(0)
            );
            Ok((stats, json!({ "anytime": params })))
        }
    }
}

pub fn train_policy(args: TrainPolicyArgs, cfg: &FileConfig) -> Result<()> {
    let source = resolve_source(&args.data, cfg)?;
    let kind = args
        .kind
        .or(cfg.kind)
        .ok_or_else(|| usage("--kind is required (oneshot or anytime)"))?;
    if args.rows_out.is_some() && kind != PolicyKindArg::Oneshot {
        return Err(usage("--rows-out applies only to --kind oneshot"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let predictor = resolve_predictor(&args.predictor, cfg, seed);
    let oracle = resolve_oracle(&args.oracle, cfg);
    let sched = resolve_costs(&args.costs, cfg, source.task)?;
    let loss_params = ModifiedLossParams::new(oracle.loss.to_kind(), oracle.lambda)?;
    let settings = PolicySettings {
        kind,
        search: oracle.search.to_kind(),
        tau: oracle.tau,
        n_folds: args.n_folds.or(cfg.n_folds).unwrap_or(3),
        seed,
        policy_epochs: args.policy_epochs.or(cfg.policy_epochs),
        reg: args.reg.or(cfg.reg),
        t0: args.t0.or(cfg.t0),
        class_weights: parse_list_flag(&args.class_weights, &cfg.class_weights, "--class-weights")?,
        use_importance_weights: !(args.no_importance_weights
            || cfg.no_importance_weights.unwrap_or(false)),
        epochs_per_step: args.epochs_per_step.or(cfg.epochs_per_step),
    };
    let corpus = source.load()?;
    let (stats, params_value) = match &corpus {
        Corpus::Chain(xs) => {
            let alphabet = predictor.chain_alphabet(&source);
            let tparams = predictor.chain_params();
            train_policy_generic(
                xs,
                |idx| {
                    let subset: Vec<GlyphSequence> = idx.iter().map(|&i| xs[i].clone()).collect();
                    train_chain(&subset, alphabet, &tparams)
                },
                &loss_params,
                &sched,
                &settings,
                args.rows_out.as_deref(),
                &args.out,
            )?
        }
        Corpus::Dep(xs) => {
            let tparams = predictor.dep_params();
            train_policy_generic(
                xs,
                |idx| {
                    let subset: Vec<Sentence> = idx.iter().map(|&i| xs[i].clone()).collect();
                    train_dep(&subset, &tparams)
                },
                &loss_params,
                &sched,
                &settings,
                args.rows_out.as_deref(),
                &args.out,
            )?
        }
    };
    let config = json!({
        "data": source,
        "kind": match kind { PolicyKindArg::Oneshot => "oneshot", PolicyKindArg::Anytime => "anytime" },
        "predictor": predictor,
        "oracle": oracle,
        "costs": sched,
        "n_folds": settings.n_folds,
        "seed": seed,
        "use_importance_weights": settings.use_importance_weights,
        "policy_params": params_value,
    });
    let mut outputs = vec![args.out.clone()];
    if let Some(rows) = &args.rows_out {
        outputs.push(rows.clone());
    }
    let manifest = write_manifest("train-policy", config, &source.input_paths(), &outputs)?;
    println!("trained {stats} -> {}", args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

enum LoadedPolicy {
    OneShot(OneShotPolicy),
    Anytime(AnytimePolicy),
}

fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading policy file {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| data_error(format!("policy file {}: {e}", path.display())))?;
    let bad = |e: budgetsp::Error| data_error(format!("policy file {}: {e}", path.display()));
    match value.get("format").and_then(|f| f.as_str()) {
        Some("budgetsp-oneshot-policy") => {
            Ok(LoadedPolicy::OneShot(OneShotPolicy::from_json(&text).map_err(bad)?))
        }
        Some("budgetsp-anytime-policy") => {
            Ok(LoadedPolicy::Anytime(AnytimePolicy::from_json(&text).map_err(bad)?))
        }
        other => Err(data_error(format!(
            "policy file {}: unrecognized format {other:?}",
            path.display()
        ))),
    }
}

/// The evaluation to run: a trained policy or one of the fixed baselines.
enum EvalMode {
    OneShot(OneShotPolicy),
    Anytime(AnytimePolicy, Vec<f64>),
    Zero,
    Full,
    Uniform { fraction: f64, seed: u64 },
    Myopic { threshold: f64 },
}

/// JSON has no literal for infinity, so an unlimited budget is written as the
/// string `"inf"`; finite budgets stay numbers.
fn budget_value(budget: f64) -> serde_json::Value {
    if budget.is_finite() {
        json!(budget)
    } else {
        json!("inf")
    }
}

fn serialize_budget<S: serde::Serializer>(
    budget: &f64,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    budget_value(*budget).serialize(serializer)
}

impl EvalMode {
    fn describe(&self) -> serde_json::Value {
        match self {
            EvalMode::OneShot(_) => json!({ "policy": "oneshot-file" }),
            EvalMode::Anytime(_, budgets) => {
                let budgets: Vec<_> = budgets.iter().copied().map(budget_value).collect();
                json!({ "policy": "anytime-file", "budgets": budgets })
            }
            EvalMode::Zero => json!({ "policy": "zero" }),
            EvalMode::Full => json!({ "policy": "full" }),
            EvalMode::Uniform { fraction, seed } => {
                json!({ "policy": "uniform", "fraction": fraction, "seed": seed })
            }
            EvalMode::Myopic { threshold } => {
                json!({ "policy": "myopic", "threshold": threshold })
            }
        }
    }

    fn default_control(&self) -> f64 {
        match self {
            EvalMode::OneShot(_) | EvalMode::Zero => 0.0,
            EvalMode::Full => 1.0,
            EvalMode::Uniform { fraction, .. } => *fraction,
            EvalMode::Myopic { threshold } => *threshold,
            EvalMode::Anytime(..) => 0.0, // unused: anytime rows carry budgets
        }
    }
}

/// A trace dump line: which budget and example produced the trace.
#[derive(Serialize)]
struct TraceRecord<'a> {
    #[serde(serialize_with = "serialize_budget")]
    budget: f64,
    example: usize,
    trace: &'a ExecutionTrace,
}

fn eval_generic<X, P>(
    data: &[X],
    model: &P,
    mode: &EvalMode,
    metric: Metric,
    sched: &CostSchedule,
    control: f64,
    dump_traces: Option<&Path>,
) -> Result<Vec<EvalCsvRow>>
where
    X: PolicyInstrumented + Sync,
    P: Predictor<Example = X> + MarginPredictor<Example = X> + Sync,
{
    match mode {
        EvalMode::OneShot(policy) => {
            let summary =
                evaluate(data, |_, x| run_oneshot(x, policy, model, sched), metric, sched)?;
            Ok(vec![EvalCsvRow::from_summary(control, &summary)])
        }
        EvalMode::Anytime(policy, budgets) => {
            let mut rows = Vec::with_capacity(budgets.len());
            let mut dump = dump_traces.map(create_out).transpose()?;
            for &budget in budgets {
                let captured: Mutex<Vec<(usize, ExecutionTrace)>> = Mutex::new(Vec::new());
                let summary = evaluate(
                    data,
                    |i, x| {
                        let (prediction, trace) = run_anytime(x, policy, model, sched, budget)?;
                        let ledger = trace.final_ledger().clone();
                        if dump.is_some() {
                            captured.lock().unwrap().push((i, trace));
                        }
                        Ok((prediction, ledger))
                    },
                    metric,
                    sched,
                )?;
                rows.push(EvalCsvRow::from_summary(budget, &summary));
                if let Some(out) = dump.as_mut() {
                    let mut traces = captured.into_inner().unwrap();
                    traces.sort_by_key(|(i, _)| *i);
                    for (example, trace) in &traces {
                        let record = TraceRecord { budget, example: *example, trace };
                        serde_json::to_writer(&mut *out, &record)?;
                        out.write_all(b"\n")?;
                    }
                }
            }
            if let Some(mut out) = dump {
                out.flush()?;
            }
            Ok(rows)
        }
        EvalMode::Zero => {
            let summary = evaluate(
                data,
                |_, x| {
                    let state = AcquisitionState::zero(model.num_tiers(), x.num_parts());
                    run_fixed_state(x, model, sched, &state)
                },
                metric,
                sched,
            )?;
            Ok(vec![EvalCsvRow::from_summary(control, &summary)])
        }
        EvalMode::Full => {
            let summary = evaluate(
                data,
                |_, x| {
                    let state = AcquisitionState::full_acquirable(model.num_tiers(), x.num_parts());
                    run_fixed_state(x, model, sched, &state)
                },
                metric,
                sched,
            )?;
            Ok(vec![EvalCsvRow::from_summary(control, &summary)])
        }
        EvalMode::Uniform { fraction, seed } => {
            let summary = evaluate(
                data,
                |i, x| {
                    let total = (model.num_tiers() - 1) * x.num_parts();
                    let bits = (fraction * total as f64).round() as usize;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(*seed, i as u64));
                    run_uniform(x, model, sched, bits, &mut rng)
                },
                metric,
                sched,
            )?;
            Ok(vec![EvalCsvRow::from_summary(control, &summary)])
        }
        EvalMode::Myopic { threshold } => {
            let summary =
                evaluate(data, |_, x| run_myopic(x, model, sched, *threshold), metric, sched)?;
            Ok(vec![EvalCsvRow::from_summary(control, &summary)])
        }
    }
}

pub fn eval(args: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let source = resolve_source(&args.data, cfg)?;
    let sched = resolve_costs(&args.costs, cfg, source.task)?;
    let metric = args
        .metric
        .or(cfg.metric)
        .unwrap_or_else(|| default_metric(source.task))
        .to_metric();
    let budgets = parse_list_flag(&args.budgets, &cfg.budgets, "--budgets")?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);

    let mode = if let Some(path) = &args.policy_file {
        match load_policy(path)? {
            LoadedPolicy::OneShot(p) => EvalMode::OneShot(p),
            LoadedPolicy::Anytime(p) => {
                let budgets = budgets
                    .ok_or_else(|| usage("--budgets is required for an anytime policy"))?;
                if budgets.is_empty() || budgets.iter().any(|b| !(*b >= 0.0)) {
                    return Err(usage("--budgets needs one or more values >= 0"));
                }
                EvalMode::Anytime(p, budgets)
            }
        }
    } else {
        match args.policy {
            Some(FixedPolicyArg::Zero) => EvalMode::Zero,
            Some(FixedPolicyArg::Full) => EvalMode::Full,
            Some(FixedPolicyArg::Uniform) => {
                let fraction = args
                    .uniform_fraction
                    .or(cfg.uniform_fraction)
                    .ok_or_else(|| usage("--uniform-fraction is required with --policy uniform"))?;
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(usage(format!(
                        "--uniform-fraction must lie in [0, 1], got {fraction}"
                    )));
                }
                EvalMode::Uniform { fraction, seed }
            }
            Some(FixedPolicyArg::Myopic) => {
                let threshold = args
                    .threshold
                    .or(cfg.threshold)
                    .ok_or_else(|| usage("--threshold is required with --policy myopic"))?;
                EvalMode::Myopic { threshold }
            }
            None => {
                return Err(usage(
                    "pass --policy-file FILE or --policy {zero|full|uniform|myopic}",
                ))
            }
        }
    };
    if args.dump_traces.is_some() && !matches!(mode, EvalMode::Anytime(..)) {
        return Err(usage("--dump-traces applies only to anytime policies"));
    }
    let control = args.control.or(cfg.control).unwrap_or_else(|| mode.default_control());

    let corpus = source.load()?;
    let rows = match &corpus {
        Corpus::Chain(xs) => {
            let model = load_chain_model(&args.model)?;
            eval_generic(xs, &model, &mode, metric, &sched, control, args.dump_traces.as_deref())?
        }
        Corpus::Dep(xs) => {
            let model = load_dep_model(&args.model)?;
            eval_generic(xs, &model, &mode, metric, &sched, control, args.dump_traces.as_deref())?
        }
    };
    write_eval_csv(&rows, create_out(&args.out)?)?;

    let config = json!({
        "data": source,
        "model": args.model,
        "mode": mode.describe(),
        "metric": metric,
        "costs": sched,
        "control": control,
    });
    let mut inputs = source.input_paths();
    inputs.push(args.model.clone());
    if let Some(path) = &args.policy_file {
        inputs.push(path.clone());
    }
    let mut outputs = vec![args.out.clone()];
    if let Some(path) = &args.dump_traces {
        outputs.push(path.clone());
    }
    let manifest = write_manifest("eval", config, &inputs, &outputs)?;
    for row in &rows {
        println!(
            "control {:>8.3}: accuracy {:.4}, feature cost {:.3}, total cost {:.3}",
            row.budget_or_lambda, row.accuracy, row.feature_cost, row.total_cost
        );
    }
    println!("wrote {} row(s) -> {}", rows.len(), args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn sweep(args: SweepArgs, cfg: &FileConfig) -> Result<()> {
    let task = args
        .data
        .task
        .or(cfg.task)
        .ok_or_else(|| usage("--task is required (chain or dep)"))?;
    let train_path = args.train.clone().or_else(|| cfg.train.clone());
    let test_path = args.test.clone().or_else(|| cfg.test.clone());
    if train_path.is_some() != test_path.is_some() {
        return Err(usage("--train and --test must be given together"));
    }

    let (train_corpus, test_corpus, sources, synthetic) = match (train_path, test_path) {
        (Some(train), Some(test)) => {
            let train_source = DataSource::from_file(task, train);
            let test_source = DataSource::from_file(task, test);
            let train_corpus = train_source.load()?;
            let test_corpus = test_source.load()?;
            (train_corpus, test_corpus, vec![train_source, test_source], false)
        }
        _ => {
            let source = resolve_source(&args.data, cfg)?;
            let synthetic = source.synthetic.is_some();
            let mut all = source.load()?;
            let n = all.len();
            let train_count = args.train_count.or(cfg.train_count).unwrap_or(n / 2);
            if train_count == 0 || train_count >= n {
                return Err(usage(format!(
                    "--train-count must split {n} examples into two non-empty halves, got {train_count}"
                )));
            }
            let test_corpus = all.split_off(train_count);
            (all, test_corpus, vec![source], synthetic)
        }
    };

    let lambdas = parse_list_flag(&args.lambdas, &cfg.lambdas, "--lambdas")?
        .ok_or_else(|| usage("--lambdas is required"))?;
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let predictor = resolve_predictor(&args.predictor, cfg, seed);
    let sched = resolve_costs(&args.costs, cfg, task)?;
    let metric = args
        .metric
        .or(cfg.metric)
        .unwrap_or_else(|| default_metric(task))
        .to_metric();

    let mut oneshot = OneShotParams::new(2);
    oneshot.seed = seed;
    oneshot.use_importance_weights =
        !(args.no_importance_weights || cfg.no_importance_weights.unwrap_or(false));
    if let Some(e) = args.policy_epochs.or(cfg.policy_epochs) {
        oneshot.epochs = e;
    }
    if let Some(r) = args.reg.or(cfg.reg) {
        oneshot.reg = r;
    }
    if let Some(t) = args.t0.or(cfg.t0) {
        oneshot.t0 = t;
    }
    if let Some(cw) = parse_list_flag(&args.class_weights, &cfg.class_weights, "--class-weights")? {
        oneshot.class_weights = cw;
    }

    let config = SweepConfig {
        task: match (task, synthetic) {
            (TaskArg::Dep, _) => SweepTask::DepParse,
            (TaskArg::Chain, true) => SweepTask::Synthetic,
            (TaskArg::Chain, false) => SweepTask::Ocr,
        },
        lambdas,
        loss: args
            .oracle_rest
            .loss
            .or(cfg.loss)
            .unwrap_or(LossArg::Hamming)
            .to_kind(),
        search: args
            .oracle_rest
            .search
            .or(cfg.search)
            .unwrap_or(SearchArg::Trajectory)
            .to_kind(),
        tau: args.oracle_rest.tau.or(cfg.tau).unwrap_or(0.0),
        n_folds: args.n_folds.or(cfg.n_folds).unwrap_or(3),
        seed,
        oneshot,
        uniform_fractions: parse_list_flag(
            &args.uniform_fractions,
            &cfg.uniform_fractions,
            "--uniform-fractions",
        )?
        .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]),
        uniform_repeats: args.uniform_repeats.or(cfg.uniform_repeats).unwrap_or(3),
        myopic_thresholds: parse_list_flag(
            &args.myopic_thresholds,
            &cfg.myopic_thresholds,
            "--myopic-thresholds",
        )?
        .unwrap_or_default(),
        metric,
    };

    let outcome = match (&train_corpus, &test_corpus) {
        (Corpus::Chain(tr), Corpus::Chain(te)) => {
            let alphabet = predictor.alphabet.unwrap_or(if synthetic {
                args.data
                    .synthetic_alphabet
                    .or(cfg.synthetic_alphabet)
                    .unwrap_or(6)
            } else {
                26
            });
            let tparams = predictor.chain_params();
            run_sweep(
                tr,
                te,
                |idx| {
                    let subset: Vec<GlyphSequence> = idx.iter().map(|&i| tr[i].clone()).collect();
                    train_chain(&subset, alphabet, &tparams)
                },
                &sched,
                &config,
            )?
        }
        (Corpus::Dep(tr), Corpus::Dep(te)) => {
            let tparams = predictor.dep_params();
            run_sweep(
                tr,
                te,
                |idx| {
                    let subset: Vec<Sentence> = idx.iter().map(|&i| tr[i].clone()).collect();
                    train_dep(&subset, &tparams)
                },
                &sched,
                &config,
            )?
        }
        _ => return Err(usage("--train and --test must hold the same task's data")),
    };

    for e in &outcome.errors {
        eprintln!("warning: lambda {}: {}", e.control, e.message);
    }
    write_sweep_csv(&outcome.points, create_out(&args.out)?)?;

    let config_json = json!({
        "sources": sources,
        "train_examples": train_corpus.len(),
        "test_examples": test_corpus.len(),
        "predictor": predictor,
        "costs": sched,
        "sweep": config,
        "outcome": {
            "errors": outcome.errors,
            "pseudo_mean_costs": outcome.pseudo_mean_costs,
        },
    });
    let inputs: Vec<PathBuf> = sources.iter().flat_map(|s| s.input_paths()).collect();
    let manifest = write_manifest("sweep", config_json, &inputs, std::slice::from_ref(&args.out))?;
    println!(
        "wrote {} curve points ({} lambda(s) failed) -> {}",
        outcome.points.len(),
        outcome.errors.len(),
        args.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
