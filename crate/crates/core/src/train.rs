//! The joint training loop: rollouts under π, V-trace critic fitting, a
//! constrained policy step at fixed threshold, then threshold updates from
//! fresh Γ episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{coverage_bit, CalibratorState};
use crate::cpo::{cpo_update, estimate_constraint, importance_weights, CpoConfig, CpoReport, SurrogateBatch};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{CriticHead, PolicyHead};
use crate::policy::{AlwaysContinue, Filtered, Gamma, RoutingPolicy, ThresholdPolicy};
use crate::rollout::{run_episode, EpisodeLog};
use crate::vtrace::{vtrace_targets, CriticTrainer, FitReport, Signal, VTraceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: usize,
    /// Episodes per policy update.
    pub batch_size: usize,
    pub critic_lr: f64,
    /// Critic optimizer steps per update.
    pub critic_steps: usize,
    /// Γ episodes (and threshold updates) per iteration.
    pub kappa_episodes: usize,
    /// Use the verifier-augmented coverage event during training.
    pub use_verifier: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 1000,
            batch_size: 5,
            critic_lr: 1e-3,
            critic_steps: 20,
            kappa_episodes: 5,
            use_verifier: true,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return Err(Error::Config("train.critic_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the loop mutates.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub head: PolicyHead,
    pub cost: CriticTrainer,
    pub coverage: CriticTrainer,
    pub calibrator: CalibratorState,
    pub iterations: usize,
}

impl TrainState {
    /// Fresh networks drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(num_models: usize, calibrator: CalibratorState, critic_lr: f64, rng: &mut R) -> Self {
        let head = PolicyHead::new(num_models, rng);
        let cost = CriticTrainer::new(CriticHead::new(rng), critic_lr);
        let coverage = CriticTrainer::new(CriticHead::new(rng), critic_lr);
        TrainState { head, cost, coverage, calibrator, iterations: 0 }
    }

    pub fn threshold_policy(&self) -> ThresholdPolicy {
        ThresholdPolicy::new(self.head.clone(), self.calibrator.routing_threshold())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub avg_cost: f64,
    pub routed_accuracy: f64,
    pub empirical_coverage: f64,
    pub j_bar: f64,
    pub p_routed_correct: f64,
    pub cost_fit: FitReport,
    pub coverage_fit: FitReport,
    /// Threshold the policy step was taken at.
    pub routing_threshold: f64,
    pub kappa: f64,
    /// Miscoverage of this iteration's Γ episodes.
    pub gamma_miscoverage: f64,
    pub skipped_episodes: usize,
    pub cpo: CpoReport,
}

const MAX_SKIPS_PER_EPISODE: usize = 100;

/// Runs `n` episodes of `policy`, skipping (and counting) episodes aborted
/// on a missing trace branch.
pub fn collect<E, P>(env: &mut E, policy: &P, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<EpisodeLog>, usize)>
where
    E: Environment + ?Sized,
    P: RoutingPolicy + ?Sized,
{
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0;
    while out.len() < n {
        let seed = rng.random::<u64>();
        match run_episode(env, policy, seed, rng) {
            Ok(ep) => out.push(ep),
            Err(Error::MissingBranch { .. }) if skipped < MAX_SKIPS_PER_EPISODE * n => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Frequency of `R_M = 0` over `n` episodes.
pub fn large_wrong_rate<E: Environment + ?Sized>(env: &mut E, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (eps, _) = collect(env, &AlwaysContinue { num_models: env.num_models() }, n, &mut rng)?;
    Ok(eps.iter().filter(|e| !e.terminal.large_model_correct).count() as f64 / n.max(1) as f64)
}

fn fit(
    trainer: &mut CriticTrainer,
    episodes: &[EpisodeLog],
    target: &Filtered<'_>,
    vt: &VTraceConfig,
    signal: Signal,
    steps: usize,
) -> Result<(FitReport, Vec<Vec<f64>>)> {
    let targets: Vec<Vec<f64>> = vtrace_targets(episodes, &trainer.critic, target, vt, signal)?
        .into_iter()
        .map(|t| t.targets)
        .collect();
    let report = trainer.fit(episodes, &targets, steps)?;
    let adv = vtrace_targets(episodes, &trainer.critic, target, vt, signal)?
        .into_iter()
        .map(|t| t.behavior_advantages)
        .collect();
    Ok((report, adv))
}

/// One training iteration.
pub fn train_iteration<E: Environment + ?Sized>(
    env: &mut E,
    state: &mut TrainState,
    settings: &TrainSettings,
    cpo: &CpoConfig,
    vt: &VTraceConfig,
    p_large_wrong: f64,
    rng: &mut ChaCha8Rng,
) -> Result<IterationLog> {
    let threshold = state.calibrator.routing_threshold();
    let tp = ThresholdPolicy::new(state.head.clone(), threshold);
    let (episodes, mut skipped) = collect(env, &state.head, settings.batch_size, rng)?;
    let target = Filtered(&tp);
    let (cost_fit, cost_adv) = fit(&mut state.cost, &episodes, &target, vt, Signal::Cost, settings.critic_steps)?;
    let cov_signal = Signal::Coverage { use_verifier: settings.use_verifier };
    let (coverage_fit, cov_adv) = fit(&mut state.coverage, &episodes, &target, vt, cov_signal, settings.critic_steps)?;
    let estimate = estimate_constraint(&episodes, &tp, p_large_wrong, vt)?;
    let weights = importance_weights(&episodes, &tp, vt)?;
    let batch = SurrogateBatch::new(&state.head, &episodes, &cost_adv, &cov_adv, weights, cpo.constraint_gradient)?;
    let (head, report) = cpo_update(&state.head, &batch, &estimate, cpo, threshold)?;
    state.head = head;

    // threshold updates from the updated policy at the threshold it was trained at
    let gamma_tp = ThresholdPolicy::new(state.head.clone(), threshold);
    let (gamma_eps, gamma_skipped) = collect(env, &Gamma(&gamma_tp), settings.kappa_episodes, rng)?;
    skipped += gamma_skipped;
    let mut misses = 0;
    for ep in &gamma_eps {
        let covered = coverage_bit(ep.coverage_event(), settings.use_verifier);
        misses += usize::from(!covered);
        state.calibrator.update(covered);
    }
    state.iterations += 1;

    let n = episodes.len() as f64;
    Ok(IterationLog {
        iteration: state.iterations,
        avg_cost: episodes.iter().map(|e| e.total_cost()).sum::<f64>() / n,
        routed_accuracy: episodes.iter().filter(|e| e.terminal.routed_correct).count() as f64 / n,
        empirical_coverage: estimate.empirical_coverage,
        j_bar: estimate.j_bar,
        p_routed_correct: estimate.p_routed_correct,
        cost_fit,
        coverage_fit,
        routing_threshold: threshold,
        kappa: state.calibrator.kappa,
        gamma_miscoverage: misses as f64 / gamma_eps.len().max(1) as f64,
        skipped_episodes: skipped,
        cpo: report,
    })
}

/// Runs `settings.iterations` iterations, passing each log row to `on_iter`.
#[allow(clippy::too_many_arguments)]
pub fn train<E, F>(
    env: &mut E,
    state: &mut TrainState,
    settings: &TrainSettings,
    cpo: &CpoConfig,
    vt: &VTraceConfig,
    p_large_wrong: f64,
    rng: &mut ChaCha8Rng,
    mut on_iter: F,
) -> Result<()>
where
    E: Environment + ?Sized,
    F: FnMut(&IterationLog) -> Result<()>,
{
    settings.validate()?;
    cpo.validate()?;
    vt.validate()?;
    for _ in 0..settings.iterations {
        let it = state.iterations + 1;
        let row = train_iteration(env, state, settings, cpo, vt, p_large_wrong, rng).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("iteration {it}: {m}")),
            other => other,
        })?;
        on_iter(&row)?;
    }
    Ok(())
}
