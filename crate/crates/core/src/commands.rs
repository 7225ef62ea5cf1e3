//! The four pipelines behind the command line: train, calibrate, evaluate
//! and simulate. Each writes its artifacts under the configured output
//! directory and is byte-reproducible for a fixed seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::Action;
use crate::calibrate::{coverage_bit, run_calibration, CalibrationRun, CalibratorState};
use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::config::{EnvSource, RunConfig, TraceSpec};
use crate::costs::{eval_report, AccuracyScale, CostBasis, CostBreakdown, EvalReport};
use crate::env::{brute_force_values_with, Environment, SyntheticEnv, SyntheticEnvConfig, TraceEnv, TraceOrder, ENUMERATION_LIMIT};
use crate::error::{Error, Result};
use crate::features::{FeatureBuilder, NormStats, FEATURE_DIM};
use crate::policy::{AlwaysContinue, AlwaysEscalate, Gamma, RoutingPolicy, UncertaintyThreshold};
use crate::rollout::{run_episode, EpisodeLog};
use crate::trace::{load_trace_file, save_trace_file, Branch, ModelId, StepRecord, TerminalLabel, TraceNode, TraceTree};
use crate::train::{large_wrong_rate, train, TrainState};

/// Seed offsets separating the random streams of one run.
const CAL_STREAM: u64 = 0x0C41_B7A7_E000_0001;
const EVAL_STREAM: u64 = 0x0E7A_1000_0000_0002;
const SIM_STREAM: u64 = 0x051A_0000_0000_0003;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Canonical single-line JSON (sorted keys).
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    serde_json::to_string(&v).expect("value serializes")
}

fn load_traces(path: &Path, spec: &TraceSpec) -> Result<Vec<TraceTree>> {
    let trees = load_trace_file(path)?;
    for t in &trees {
        t.validate(spec.t_max)?;
    }
    Ok(trees)
}

/// Uncertainty statistics over every step of the training traces.
fn fit_trace_norm(trees: &[TraceTree]) -> NormStats {
    NormStats::fit(trees.iter().flat_map(|t| t.steps().into_iter().map(|s| s.uncertainty)))
}

fn trace_num_models(trees: &[TraceTree]) -> Result<usize> {
    trees
        .first()
        .map(|t| t.num_models())
        .ok_or_else(|| Error::Config("training trace file is empty".into()))
}

/// Environments for the training, calibration and evaluation streams.
pub struct Envs {
    pub train: Box<dyn Environment>,
    pub cal: Box<dyn Environment>,
    pub features: FeatureBuilder,
}

/// Builds environments with `features` (or fresh statistics when `None`).
pub fn build_envs(cfg: &RunConfig, features: Option<FeatureBuilder>) -> Result<Envs> {
    match &cfg.env {
        EnvSource::Synthetic(s) => {
            let features = features.unwrap_or_else(|| s.feature_builder());
            let train = SyntheticEnv::with_features(s.clone(), features);
            let mut cal_cfg = s.clone();
            cal_cfg.seed ^= CAL_STREAM;
            let cal = SyntheticEnv::with_features(cal_cfg, features);
            Ok(Envs { train: Box::new(train), cal: Box::new(cal), features })
        }
        EnvSource::Traces(spec) => {
            let train_trees = load_traces(&spec.train, spec)?;
            let k = trace_num_models(&train_trees)?;
            let features = features.unwrap_or_else(|| FeatureBuilder::new(spec.t_max, k, fit_trace_norm(&train_trees)));
            let cal_trees = load_traces(&spec.cal, spec)?;
            let train = TraceEnv::new(train_trees, features, spec.cost_basis)?.with_order(TraceOrder::Sampled);
            let cal = TraceEnv::new(cal_trees, features, spec.cost_basis)?.with_order(TraceOrder::Sampled);
            Ok(Envs { train: Box::new(train), cal: Box::new(cal), features })
        }
    }
}

/// ℙ(R_M = 0) on the calibration split.
pub fn p_large_wrong(cfg: &RunConfig, envs: &mut Envs) -> Result<f64> {
    match &cfg.env {
        EnvSource::Synthetic(_) => large_wrong_rate(envs.cal.as_mut(), cfg.p_large_wrong_episodes, cfg.seed ^ CAL_STREAM),
        EnvSource::Traces(spec) => {
            let trees = load_traces(&spec.cal, spec)?;
            if trees.is_empty() {
                return Err(Error::Config("calibration trace file is empty".into()));
            }
            let wrong = trees
                .iter()
                .filter(|t| t.leaves().first().is_some_and(|l| !l.large_model_correct))
                .count();
            Ok(wrong as f64 / trees.len() as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub p_large_wrong: f64,
}

/// Joint training; writes `train_log.jsonl` and the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    ensure_dir(&cfg.out_dir)?;
    let mut envs = build_envs(cfg, None)?;
    let p_large_wrong = p_large_wrong(cfg, &mut envs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState::init(envs.features.num_models, cfg.initial_calibrator()?, cfg.train.critic_lr, &mut rng);
    let log_path = cfg.out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    train(
        envs.train.as_mut(),
        &mut state,
        &cfg.train,
        &cfg.cpo,
        &cfg.vtrace,
        p_large_wrong,
        &mut rng,
        |row| writeln!(log, "{}", canonical_json(row)).map_err(|e| Error::io(&log_path, e)),
    )?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        feature_dim: FEATURE_DIM,
        num_models: envs.features.num_models,
        t_max: envs.features.t_max,
        norm: envs.features.norm,
        policy: state.head,
        cost_critic: state.cost.critic,
        coverage_critic: state.coverage.critic,
        routing_threshold: state.calibrator.routing_threshold(),
        calibrator: state.calibrator,
        iterations: state.iterations,
    };
    if let Some(dir) = cfg.checkpoint.parent() {
        ensure_dir(dir)?;
    }
    checkpoint.save(&cfg.checkpoint)?;
    Ok(TrainOutcome { checkpoint, checkpoint_path: cfg.checkpoint.clone(), log_path, p_large_wrong })
}

/// Calibrates the threshold of a frozen checkpoint on the calibration stream.
pub fn recalibrate(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(Checkpoint, CalibrationRun)> {
    let mut envs = build_envs(cfg, Some(ckpt.features()))?;
    let r = &cfg.recalibration;
    let mut state = CalibratorState::new(1.0 - ckpt.routing_threshold, cfg.cpo.alpha, r.step, r.schedule)?;
    state.window_size = ckpt.calibrator.window_size;
    let run = run_calibration(envs.cal.as_mut(), &ckpt.policy, state, r.episodes, r.use_verifier, cfg.seed ^ CAL_STREAM)?;
    let mut out = ckpt.clone();
    out.routing_threshold = run.state.routing_threshold();
    out.calibrator = run.state.clone();
    Ok((out, run))
}

/// Post-training calibration; rewrites the checkpoint and writes `calibration.tsv`.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<(Checkpoint, CalibrationRun)> {
    ensure_dir(&cfg.out_dir)?;
    let ckpt = Checkpoint::load(&cfg.checkpoint)?;
    let (out, run) = recalibrate(cfg, &ckpt)?;
    write_file(&cfg.out_dir.join("calibration.tsv"), &run.to_tsv())?;
    out.save(&cfg.checkpoint)?;
    Ok((out, run))
}

/// Exact values of a policy on a synthetic environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExactSummary {
    pub expected_cost: f64,
    pub accuracy: f64,
    pub coverage: f64,
}

/// Evaluation of one routing rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicySummary {
    pub name: String,
    /// Raw-uncertainty threshold of a fixed-threshold baseline.
    pub threshold: Option<f64>,
    pub report: EvalReport,
    /// Fraction of evaluated problems with `R_Π = 1 ∨ R_M = 0`.
    pub coverage: f64,
    /// Problems aborted on a missing trace branch (excluded above).
    pub skipped: usize,
    pub exact: Option<ExactSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub routing_threshold: f64,
    pub learned: PolicySummary,
    pub always_small: PolicySummary,
    pub always_large: PolicySummary,
    pub uncertainty_thresholds: Vec<PolicySummary>,
}

/// One evaluated problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemRow {
    pub problem: String,
    pub correct: bool,
    pub large_correct: bool,
    pub covered: bool,
    pub cost: f64,
    /// Number of routed steps before the first escalation, if any.
    pub escalated_after: Option<usize>,
    pub steps: usize,
}

fn row(problem: String, ep: &EpisodeLog) -> ProblemRow {
    ProblemRow {
        problem,
        correct: ep.terminal.routed_correct,
        large_correct: ep.terminal.large_model_correct,
        covered: coverage_bit(ep.coverage_event(), false),
        cost: ep.total_cost(),
        escalated_after: ep.steps.iter().position(|s| s.action != Action::Continue),
        steps: ep.len(),
    }
}

fn summarize(name: &str, threshold: Option<f64>, rows: &[ProblemRow], skipped: usize, basis: CostBasis) -> Result<PolicySummary> {
    let results: Vec<(bool, CostBreakdown)> = rows
        .iter()
        .map(|r| {
            let mut c = CostBreakdown::default();
            match basis {
                CostBasis::Flops => c.flops_e12 = r.cost,
                CostBasis::Api => c.api_cents = r.cost,
            }
            (r.correct, c)
        })
        .collect();
    let report = eval_report(&results, basis, AccuracyScale::conventional(basis))?;
    Ok(PolicySummary {
        name: name.to_string(),
        threshold,
        coverage: rows.iter().filter(|r| r.covered).count() as f64 / rows.len() as f64,
        report,
        skipped,
        exact: None,
    })
}

/// Evaluation problems: fixed seeds on a synthetic stream, or every
/// evaluation tree in file order.
enum EvalSet {
    Synthetic { config: SyntheticEnvConfig, seeds: Vec<u64> },
    Traces { trees: Vec<TraceTree>, basis: CostBasis },
}

impl EvalSet {
    fn basis(&self) -> CostBasis {
        match self {
            EvalSet::Synthetic { .. } => CostBasis::Flops,
            EvalSet::Traces { basis, .. } => *basis,
        }
    }

    fn run<P: RoutingPolicy + ?Sized>(&self, features: FeatureBuilder, policy: &P) -> Result<(Vec<ProblemRow>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rows = Vec::new();
        let mut skipped = 0;
        match self {
            EvalSet::Synthetic { config, seeds } => {
                let mut env = SyntheticEnv::with_features(config.clone(), features);
                for (i, seed) in seeds.iter().enumerate() {
                    let ep = run_episode(&mut env, policy, *seed, &mut rng)?;
                    rows.push(row(format!("synthetic-{i}"), &ep));
                }
            }
            EvalSet::Traces { trees, basis } => {
                let mut env = TraceEnv::new(trees.clone(), features, *basis)?;
                for t in trees {
                    match run_episode(&mut env, policy, 0, &mut rng) {
                        Ok(ep) => rows.push(row(t.problem_id.clone(), &ep)),
                        Err(Error::MissingBranch { .. }) => skipped += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::Validation("no evaluation problem could be served".into()));
        }
        Ok((rows, skipped))
    }
}

/// Candidate raw-uncertainty thresholds: every score value a synthetic
/// environment can emit (escalating below each), plus one above all of them.
pub fn synthetic_thresholds(config: &SyntheticEnvConfig) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::new();
    for s in 0..config.num_states() {
        for sound in [true, false] {
            for (z, _) in config.levels() {
                values.push(config.emission_value(s, sound, z));
            }
        }
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut out = values.clone();
    if let Some(max) = values.last() {
        out.push(max + 1.0);
    }
    out
}

fn trace_thresholds(trees: &[TraceTree]) -> Vec<f64> {
    let mut u: Vec<f64> = trees.iter().flat_map(|t| t.steps().into_iter().map(|s| s.uncertainty)).collect();
    u.sort_by(f64::total_cmp);
    if u.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<f64> = (0..=20).map(|i| u[(i * (u.len() - 1)) / 20]).collect();
    out.push(u[u.len() - 1] + 1.0);
    out.dedup();
    out
}

/// Exact values of `policy` when the environment is synthetic and small enough.
fn exact_for<P: RoutingPolicy + ?Sized>(cfg: &RunConfig, features: &FeatureBuilder, policy: &P) -> Result<Option<ExactSummary>> {
    let EnvSource::Synthetic(s) = &cfg.env else {
        return Ok(None);
    };
    if crate::env::enumeration_size(s) > ENUMERATION_LIMIT {
        return Ok(None);
    }
    let v = brute_force_values_with(s, features, policy)?;
    Ok(Some(ExactSummary { expected_cost: v.expected_cost, accuracy: v.p_routed_correct, coverage: v.coverage() }))
}

/// Evaluates a checkpoint's Γ rule and the baselines.
pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(EvalSummary, Vec<ProblemRow>)> {
    let features = ckpt.features();
    let k = ckpt.num_models;
    let (set, thresholds) = match &cfg.env {
        EnvSource::Synthetic(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_STREAM);
            let seeds = (0..cfg.evaluate.episodes.max(1)).map(|_| rng.random::<u64>()).collect();
            let mut eval_cfg = s.clone();
            eval_cfg.seed ^= EVAL_STREAM;
            let thresholds = synthetic_thresholds(s);
            (EvalSet::Synthetic { config: eval_cfg, seeds }, thresholds)
        }
        EnvSource::Traces(spec) => {
            let trees = load_traces(&spec.eval, spec)?;
            let thresholds = trace_thresholds(&load_traces(&spec.train, spec)?);
            (EvalSet::Traces { trees, basis: spec.cost_basis }, thresholds)
        }
    };
    let thresholds = if cfg.evaluate.thresholds.is_empty() { thresholds } else { cfg.evaluate.thresholds.clone() };
    let basis = set.basis();
    let tp = ckpt.threshold_policy();

    let eval = |name: &str, threshold: Option<f64>, policy: &dyn RoutingPolicy| -> Result<(PolicySummary, Vec<ProblemRow>)> {
        let (rows, skipped) = set.run(features, policy)?;
        let mut s = summarize(name, threshold, &rows, skipped, basis)?;
        s.exact = exact_for(cfg, &features, policy)?;
        Ok((s, rows))
    };
    let (learned, rows) = eval("learned", None, &Gamma(&tp))?;
    let (always_small, _) = eval("always_small", None, &AlwaysContinue { num_models: k })?;
    let (always_large, _) = eval("always_large", None, &AlwaysEscalate { num_models: k })?;
    let mut uncertainty_thresholds = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let (s, _) = eval("uncertainty_threshold", Some(t), &UncertaintyThreshold { num_models: k, threshold: t })?;
        uncertainty_thresholds.push(s);
    }
    let summary = EvalSummary {
        routing_threshold: ckpt.routing_threshold,
        learned,
        always_small,
        always_large,
        uncertainty_thresholds,
    };
    Ok((summary, rows))
}

/// Evaluation; writes `eval_report.json` and `eval_rows.jsonl`. With
/// `recalibrate`, the threshold is first recalibrated and the checkpoint
/// rewritten.
pub fn cmd_evaluate(cfg: &RunConfig, recalibrate_first: bool) -> Result<EvalSummary> {
    ensure_dir(&cfg.out_dir)?;
    let mut ckpt = Checkpoint::load(&cfg.checkpoint)?;
    if recalibrate_first {
        let (out, run) = recalibrate(cfg, &ckpt)?;
        write_file(&cfg.out_dir.join("calibration.tsv"), &run.to_tsv())?;
        out.save(&cfg.checkpoint)?;
        ckpt = out;
    }
    let (summary, rows) = evaluate_checkpoint(cfg, &ckpt)?;
    let mut text = serde_json::to_string_pretty(&serde_json::to_value(&summary).expect("summary serializes"))
        .expect("summary serializes");
    text.push('\n');
    write_file(&cfg.out_dir.join("eval_report.json"), &text)?;
    let lines: String = rows.iter().map(|r| canonical_json(r) + "\n").collect();
    write_file(&cfg.out_dir.join("eval_rows.jsonl"), &lines)?;
    Ok(summary)
}

/// Number of nodes of a fully expanded tree (root excluded).
pub fn full_tree_size(num_models: usize, horizon: usize) -> u64 {
    // nodes[k] = number of nodes whose latest step was generated by model k at the current depth
    let mut nodes = vec![0u64; num_models];
    nodes[0] = 1;
    let mut total = 1u64;
    for _ in 0..horizon {
        let mut next = vec![0u64; num_models];
        let mut acc = 0u64;
        for k in 0..num_models {
            acc = acc.saturating_add(nodes[k]);
            next[k] = acc;
        }
        nodes = next;
        total = total.saturating_add(nodes.iter().fold(0u64, |a, b| a.saturating_add(*b)));
    }
    total
}

struct TreeSampler<'a> {
    config: &'a SyntheticEnvConfig,
    state: usize,
    u: Vec<f64>,
    /// [t][k] -> (score, verifier judgment correct)
    draws: Vec<Vec<(f64, bool)>>,
    large_ok: bool,
}

impl TreeSampler<'_> {
    fn step(&self, t: usize, k: usize) -> StepRecord {
        let (score, judged_right) = self.draws[t][k];
        let sound = self.sound(t, k);
        let tokens = self.config.tokens(k);
        StepRecord {
            text_len_tokens: tokens,
            uncertainty: score,
            is_final_answer: t == self.config.horizon,
            verifier_bit: Some(sound == judged_right),
            input_tokens_billed: 0,
            cached_tokens_billed: 0,
            output_tokens_billed: tokens,
        }
    }

    fn sound(&self, t: usize, k: usize) -> bool {
        self.u[t] < self.config.step_soundness(self.state, k)
    }

    /// Node after step `t`, generated by `k`, with the path so far correct iff `ok`.
    fn node(&self, t: usize, k: usize, ok: bool) -> TraceNode {
        let depth = t + 1;
        if t == self.config.horizon {
            let label = TerminalLabel { routed_correct: ok && self.sound(t, k), large_model_correct: self.large_ok };
            return TraceNode::leaf(depth, label);
        }
        let children = Action::available(k, self.config.num_models()).into_iter().map(|a| {
            let next = a.target(k);
            let ok_next = ok && (self.sound(t, k) || (next > k && self.u[t] < self.config.step_soundness(self.state, next)));
            (a, Branch { step: self.step(t + 1, next), node: self.node(t + 1, next, ok_next) })
        });
        TraceNode::inner(depth, children.collect::<Vec<_>>())
    }
}

/// Samples one fully expanded tree from a synthetic environment.
pub fn sample_tree(config: &SyntheticEnvConfig, problem_id: String, seed: u64) -> TraceTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = config.state_probs();
    let pick: f64 = rng.random();
    let mut acc = 0.0;
    let mut state = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if pick < acc {
            state = i;
            break;
        }
    }
    let k = config.num_models();
    let levels = config.levels();
    let u: Vec<f64> = (0..=config.horizon).map(|_| rng.random()).collect();
    let top = k - 1;
    let large_ok = u.iter().all(|u| *u < config.step_soundness(state, top));
    let draws = (0..=config.horizon)
        .map(|t| {
            (0..k)
                .map(|m| {
                    let x: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut z = levels[levels.len() - 1].0;
                    for (lz, lp) in &levels {
                        acc += lp;
                        if x < acc {
                            z = *lz;
                            break;
                        }
                    }
                    let sound = u[t] < config.step_soundness(state, m);
                    let judged_right = rng.random::<f64>() < config.verifier_accuracy;
                    (config.emission_value(state, sound, z), judged_right)
                })
                .collect()
        })
        .collect();
    let sampler = TreeSampler { config, state, u, draws, large_ok };
    let model_pool = (0..k)
        .map(|m| {
            let tokens = config.tokens(m).max(1) as f64;
            ModelId { index: m, param_count: (config.step_costs[m] * 1e12 / (2.0 * tokens)).round() as u64, pricing: None }
        })
        .collect();
    let root = TraceNode::inner(0, [(Action::Continue, Branch { step: sampler.step(0, 0), node: sampler.node(0, 0, true) })]);
    TraceTree {
        problem_id,
        difficulty: config.states[state].difficulty,
        verifier_labeled: true,
        model_pool,
        root,
    }
}

/// Samples `simulate.problems` fully expanded trees; returns the output path.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(PathBuf, Vec<TraceTree>)> {
    let EnvSource::Synthetic(s) = &cfg.env else {
        return Err(Error::Config("simulate needs a synthetic environment".into()));
    };
    let size = full_tree_size(s.num_models(), s.horizon);
    if size > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { estimate: size, limit: ENUMERATION_LIMIT });
    }
    ensure_dir(&cfg.out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SIM_STREAM);
    let trees: Vec<TraceTree> = (0..cfg.simulate.problems)
        .map(|i| sample_tree(s, format!("sim-{i:05}"), rng.random()))
        .collect();
    for t in &trees {
        t.validate(s.t_max)?;
    }
    let path = cfg.out_dir.join(&cfg.simulate.output);
    save_trace_file(&trees, &path)?;
    Ok((path, trees))
}
