//! V-trace targets and advantages for the cost and coverage critics, and
//! critic fitting.

use serde::{Deserialize, Serialize};

use crate::calibrate::coverage_bit;
use crate::error::{Error, Result};
use crate::nn::CriticHead;
use crate::policy::RoutingPolicy;
use crate::rollout::EpisodeLog;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VTraceConfig {
    pub rho_bar: f64,
    pub c_bar: f64,
    pub discount: f64,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        VTraceConfig { rho_bar: 2.0, c_bar: 1.0, discount: 1.0 }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_bar >= 1.0) || !(self.c_bar >= 1.0) || self.c_bar > self.rho_bar {
            return Err(Error::Config(format!(
                "need 1 <= c_bar <= rho_bar, got c_bar {} and rho_bar {}",
                self.c_bar, self.rho_bar
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        Ok(())
    }
}

/// Which per-step return the critic learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    /// Inference cost of each routed step.
    Cost,
    /// Coverage indicator at the last step, zero before it.
    Coverage { use_verifier: bool },
}

impl Signal {
    pub fn rewards(self, ep: &EpisodeLog) -> Vec<f64> {
        match self {
            Signal::Cost => ep.steps.iter().map(|s| s.cost).collect(),
            Signal::Coverage { use_verifier } => {
                let mut r = vec![0.0; ep.len()];
                if let Some(last) = r.last_mut() {
                    *last = f64::from(u8::from(coverage_bit(ep.coverage_event(), use_verifier)));
                }
                r
            }
        }
    }
}

/// V-trace quantities of one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTargets {
    /// v_s for every decision step.
    pub targets: Vec<f64>,
    /// ρ_s (r_s + γ v_{s+1} − V(o_s)).
    pub advantages: Vec<f64>,
    /// Clipped importance ratios ρ_s.
    pub rhos: Vec<f64>,
    /// r_s + γ v_{s+1} − V(o_s): advantage of the sampled action when the
    /// target policy takes over afterwards. Unlike `advantages` this is not
    /// reweighted toward the target, which is what a score-function gradient
    /// of the sampling policy needs.
    pub behavior_advantages: Vec<f64>,
}

/// V-trace on one trajectory.
///
/// `values` holds V(o_s) for every decision step; the state after the last
/// step is terminal with value 0. `ratios` are unclipped target/behavior
/// probability ratios.
pub fn vtrace_episode(rewards: &[f64], values: &[f64], ratios: &[f64], cfg: &VTraceConfig) -> EpisodeTargets {
    let n = rewards.len();
    assert!(values.len() == n && ratios.len() == n, "vtrace inputs must have equal lengths");
    let rhos: Vec<f64> = ratios.iter().map(|r| r.min(cfg.rho_bar)).collect();
    let mut targets = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    let mut behavior_advantages = vec![0.0; n];
    // v_{s+1} and V(o_{s+1}) for the step after s
    let (mut v_next, mut value_next) = (0.0, 0.0);
    for s in (0..n).rev() {
        let c = ratios[s].min(cfg.c_bar);
        let rho = rhos[s];
        // V + ρ(r + γV' − V) + γc(v' − V'), grouped so that ρ = c = 1 gives r + γv' exactly
        targets[s] = (1.0 - rho) * values[s]
            + rho * rewards[s]
            + cfg.discount * (rho - c) * value_next
            + cfg.discount * c * v_next;
        behavior_advantages[s] = rewards[s] + cfg.discount * v_next - values[s];
        advantages[s] = rho * behavior_advantages[s];
        v_next = targets[s];
        value_next = values[s];
    }
    EpisodeTargets { targets, advantages, rhos, behavior_advantages }
}

fn ratios<P: RoutingPolicy + ?Sized>(ep: &EpisodeLog, target: &P) -> Result<Vec<f64>> {
    ep.steps
        .iter()
        .map(|s| {
            if !(s.behavior_prob > 0.0) {
                return Err(Error::Numeric(format!(
                    "behavior probability {} cannot be importance-weighted",
                    s.behavior_prob
                )));
            }
            Ok(target.distribution(&s.observation).prob(s.action) / s.behavior_prob)
        })
        .collect()
}

/// V-trace targets and advantages for `signal`, with ratios
/// `target(a|o) / behavior(a|o)`.
pub fn vtrace_targets<P: RoutingPolicy + ?Sized>(
    episodes: &[EpisodeLog],
    critic: &CriticHead,
    target: &P,
    cfg: &VTraceConfig,
    signal: Signal,
) -> Result<Vec<EpisodeTargets>> {
    let out: Vec<EpisodeTargets> = episodes
        .iter()
        .map(|ep| {
            let values: Vec<f64> = ep.observations().map(|o| critic.value(o)).collect();
            Ok(vtrace_episode(&signal.rewards(ep), &values, &ratios(ep, target)?, cfg))
        })
        .collect::<Result<_>>()?;
    let finite = out
        .iter()
        .all(|t| t.targets.iter().chain(&t.advantages).all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Numeric("non-finite V-trace target".into()));
    }
    Ok(out)
}

/// Advantages Â_t for `signal`, per episode.
pub fn advantages<P: RoutingPolicy + ?Sized>(
    episodes: &[EpisodeLog],
    critic: &CriticHead,
    target: &P,
    cfg: &VTraceConfig,
    signal: Signal,
) -> Result<Vec<Vec<f64>>> {
    Ok(vtrace_targets(episodes, critic, target, cfg, signal)?
        .into_iter()
        .map(|t| t.advantages)
        .collect())
}

/// Adam state for full-batch critic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticTrainer {
    pub critic: CriticHead,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub loss_before: f64,
    pub loss_after: f64,
    /// Step halvings applied across all steps.
    pub halvings: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

/// Mean of `0.5 (V(o) − target)²` over all steps.
pub fn critic_loss(critic: &CriticHead, episodes: &[EpisodeLog], targets: &[Vec<f64>]) -> f64 {
    let (sum, n) = pairs(episodes, targets).fold((0.0, 0usize), |(s, n), (o, y)| {
        let e = critic.value(o) - y;
        (s + 0.5 * e * e, n + 1)
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Exact gradient of [`critic_loss`].
pub fn critic_loss_grad(critic: &CriticHead, episodes: &[EpisodeLog], targets: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; critic.mlp.num_params()];
    let n = pairs(episodes, targets).count();
    for (o, y) in pairs(episodes, targets) {
        critic.accumulate_grad(o, (critic.value(o) - y) / n as f64, &mut grad);
    }
    grad
}

fn pairs<'a>(
    episodes: &'a [EpisodeLog],
    targets: &'a [Vec<f64>],
) -> impl Iterator<Item = (&'a crate::features::Observation, f64)> + 'a {
    episodes
        .iter()
        .zip(targets)
        .flat_map(|(ep, t)| ep.observations().zip(t.iter().copied()))
}

impl CriticTrainer {
    pub fn new(critic: CriticHead, lr: f64) -> Self {
        let n = critic.mlp.num_params();
        CriticTrainer { critic, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// `steps` Adam steps on the critic loss. A step that does not reduce
    /// the loss is halved until it does, or skipped.
    pub fn fit(&mut self, episodes: &[EpisodeLog], targets: &[Vec<f64>], steps: usize) -> Result<FitReport> {
        let loss_before = critic_loss(&self.critic, episodes, targets);
        if !loss_before.is_finite() {
            return Err(Error::Numeric("non-finite critic loss".into()));
        }
        let mut loss = loss_before;
        let mut halvings = 0;
        for _ in 0..steps {
            if loss == 0.0 {
                break;
            }
            let grad = critic_loss_grad(&self.critic, episodes, targets);
            self.t += 1;
            let (b1, b2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
            let mut dir = vec![0.0; grad.len()];
            for i in 0..grad.len() {
                self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                dir[i] = -(self.m[i] / b1) / ((self.v[i] / b2).sqrt() + ADAM_EPS);
            }
            let mut scale = self.lr;
            for _ in 0..MAX_HALVINGS {
                let mut candidate = self.critic.clone();
                for (p, d) in candidate.mlp.params.iter_mut().zip(&dir) {
                    *p += scale * d;
                }
                let l = critic_loss(&candidate, episodes, targets);
                if l < loss {
                    self.critic = candidate;
                    loss = l;
                    break;
                }
                scale *= 0.5;
                halvings += 1;
            }
        }
        Ok(FitReport { loss_before, loss_after: loss, halvings })
    }
}
