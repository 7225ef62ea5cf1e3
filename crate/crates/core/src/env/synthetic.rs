//! A desk-scale generative stand-in for stepwise LLM reasoning.
//!
//! Each problem draws a latent state (difficulty class). Every step `t` has
//! a latent uniform `u_t` shared by all models: model `k`'s version of the
//! step is sound iff `u_t < q[s][k]`, where the per-step soundness
//! `q = success^(1/(horizon+1))` makes a model that generates every step
//! solve the problem with probability `success`.
//!
//! A step that is unsound when generated stays harmful unless the next step
//! is handed to a stronger model `k'` that would have produced it soundly
//! (`u_t < q[s][k']`); the final step cannot be repaired. The large model
//! alone is correct iff every `u_t < q[s][K-1]`, so with nondecreasing
//! soundness always-escalate covers every problem.
//!
//! The uncertainty score of each step is drawn from one of two discretized
//! normal distributions depending on whether the step is sound, so it is
//! informative but noisy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment};
use crate::action::Action;
use crate::error::{Error, Result};
use crate::features::{FeatureBuilder, NormStats, Observation};
use crate::trace::{TerminalLabel, T_MAX};

/// A score distribution: `mean + spread * z` over an evenly spaced z-grid on
/// [-2, 2] with normal weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub mean: f64,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentState {
    /// Relative frequency of the state.
    #[serde(default = "one")]
    pub weight: f64,
    /// Observed difficulty indicator; absent means imputed.
    #[serde(default)]
    pub difficulty: Option<f64>,
    /// Per-model probability of solving the problem when generating every step.
    pub success: Vec<f64>,
    pub sound: Emission,
    pub unsound: Emission,
}

fn one() -> f64 {
    1.0
}

fn default_levels() -> usize {
    9
}

fn default_t_max() -> usize {
    T_MAX
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEnvConfig {
    pub states: Vec<LatentState>,
    /// Cost of one step per model.
    pub step_costs: Vec<f64>,
    /// Length of one step in tokens per model (length feature only).
    #[serde(default)]
    pub step_tokens: Vec<u64>,
    /// Number of routed steps after the initial one.
    pub horizon: usize,
    pub verifier_accuracy: f64,
    #[serde(default = "default_levels")]
    pub emission_levels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
}

impl SyntheticEnvConfig {
    pub fn num_models(&self) -> usize {
        self.step_costs.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let k = self.num_models();
        if k == 0 || self.states.is_empty() {
            return bad("synthetic env needs at least one model and one state".into());
        }
        if self.step_costs.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return bad("step costs must be positive".into());
        }
        if !self.step_tokens.is_empty() && self.step_tokens.len() != k {
            return bad(format!("step_tokens has {} entries for {k} models", self.step_tokens.len()));
        }
        if self.horizon == 0 || self.horizon > self.t_max {
            return bad(format!("horizon {} must lie in 1..={}", self.horizon, self.t_max));
        }
        if !(0.0..=1.0).contains(&self.verifier_accuracy) {
            return bad("verifier_accuracy must lie in [0, 1]".into());
        }
        if self.emission_levels == 0 {
            return bad("emission_levels must be positive".into());
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.success.len() != k {
                return bad(format!("state {i}: {} success probabilities for {k} models", s.success.len()));
            }
            if s.success.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("state {i}: success probabilities must lie in [0, 1]"));
            }
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return bad(format!("state {i}: weight must be positive"));
            }
            if let Some(d) = s.difficulty {
                if !(0.0..=1.0).contains(&d) {
                    return bad(format!("state {i}: difficulty must lie in [0, 1]"));
                }
            }
            for e in [s.sound, s.unsound] {
                if !e.mean.is_finite() || !e.spread.is_finite() || e.spread < 0.0 {
                    return bad(format!("state {i}: invalid emission {e:?}"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn state_probs(&self) -> Vec<f64> {
        let total: f64 = self.states.iter().map(|s| s.weight).sum();
        self.states.iter().map(|s| s.weight / total).collect()
    }

    /// Per-step soundness probability of model `k` in state `s`.
    pub fn step_soundness(&self, s: usize, k: usize) -> f64 {
        self.states[s].success[k].powf(1.0 / (self.horizon + 1) as f64)
    }

    /// (z value, probability) of each emission level.
    pub(crate) fn levels(&self) -> Vec<(f64, f64)> {
        let n = self.emission_levels;
        let z: Vec<f64> = (0..n)
            .map(|j| if n == 1 { 0.0 } else { -2.0 + 4.0 * j as f64 / (n - 1) as f64 })
            .collect();
        let w: Vec<f64> = z.iter().map(|z| (-0.5 * z * z).exp()).collect();
        let total: f64 = w.iter().sum();
        z.into_iter().zip(w.into_iter().map(|w| w / total)).collect()
    }

    pub(crate) fn emission_value(&self, s: usize, sound: bool, z: f64) -> f64 {
        let e = if sound { self.states[s].sound } else { self.states[s].unsound };
        e.mean + e.spread * z
    }

    pub(crate) fn tokens(&self, k: usize) -> u64 {
        self.step_tokens.get(k).copied().unwrap_or(64)
    }

    /// Exact mean and standard deviation of the score of a model-0 step,
    /// averaged over latent states.
    pub fn uncertainty_stats(&self) -> NormStats {
        let levels = self.levels();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (s, ps) in self.state_probs().into_iter().enumerate() {
            let q = self.step_soundness(s, 0);
            for (sound, pq) in [(true, q), (false, 1.0 - q)] {
                for (z, pz) in &levels {
                    let v = self.emission_value(s, sound, *z);
                    m1 += ps * pq * pz * v;
                    m2 += ps * pq * pz * v * v;
                }
            }
        }
        let var = (m2 - m1 * m1).max(0.0);
        NormStats { mean: m1, std: if var > 0.0 { var.sqrt() } else { 1.0 } }
    }

    pub fn feature_builder(&self) -> FeatureBuilder {
        FeatureBuilder::new(self.t_max, self.num_models(), self.uncertainty_stats())
    }

    /// Observation after step `t` generated by `model` with raw score `score`.
    pub(crate) fn observation(&self, fb: &FeatureBuilder, s: usize, t: usize, model: usize, score: f64) -> Observation {
        fb.build_raw(score, self.tokens(model), t == self.horizon, t, self.states[s].difficulty, model)
    }
}

#[derive(Clone, Debug)]
struct Episode {
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
    model: usize,
    last_u: f64,
    last_sound: bool,
    routed_ok: bool,
    large_ok: bool,
    done: bool,
}

/// Generative environment over a [`SyntheticEnvConfig`].
#[derive(Clone, Debug)]
pub struct SyntheticEnv {
    config: SyntheticEnvConfig,
    features: FeatureBuilder,
    levels: Vec<(f64, f64)>,
    state_probs: Vec<f64>,
    episode: Option<Episode>,
}

impl SyntheticEnv {
    pub fn new(config: SyntheticEnvConfig) -> Result<Self> {
        config.validate()?;
        let features = config.feature_builder();
        Ok(Self::with_features(config, features))
    }

    /// Uses `features` (e.g. checkpointed normalization statistics) instead
    /// of the config's exact statistics.
    pub fn with_features(config: SyntheticEnvConfig, features: FeatureBuilder) -> Self {
        SyntheticEnv {
            levels: config.levels(),
            state_probs: config.state_probs(),
            features,
            config,
            episode: None,
        }
    }

    pub fn config(&self) -> &SyntheticEnvConfig {
        &self.config
    }

    pub fn features(&self) -> &FeatureBuilder {
        &self.features
    }

    /// Latent state of the current (or just finished) episode.
    pub fn latent_state(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.state)
    }

    /// Soundness of the latest generated step, for tests and diagnostics.
    pub fn last_step_sound(&self) -> Option<bool> {
        self.episode.as_ref().map(|e| e.last_sound)
    }

    fn categorical(rng: &mut ChaCha8Rng, probs: impl IntoIterator<Item = f64>) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.into_iter().enumerate() {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Generates step `ep.t` with model `ep.model`.
    fn generate(&self, ep: &mut Episode) -> EnvStep {
        let cfg = &self.config;
        let top = cfg.num_models() - 1;
        let u: f64 = ep.rng.random();
        let sound = u < cfg.step_soundness(ep.state, ep.model);
        ep.large_ok &= u < cfg.step_soundness(ep.state, top);
        let level = Self::categorical(&mut ep.rng, self.levels.iter().map(|l| l.1));
        let score = cfg.emission_value(ep.state, sound, self.levels[level].0);
        let correct_judgment = ep.rng.random::<f64>() < cfg.verifier_accuracy;
        ep.last_u = u;
        ep.last_sound = sound;
        let observation = cfg.observation(&self.features, ep.state, ep.t, ep.model, score);
        let terminal = ep.t == cfg.horizon;
        if terminal {
            ep.routed_ok &= sound;
        }
        EnvStep {
            observation,
            cost: cfg.step_costs[ep.model],
            verifier_bit: Some(sound == correct_judgment),
            terminal,
            terminal_label: terminal.then_some(TerminalLabel {
                routed_correct: ep.routed_ok,
                large_model_correct: ep.large_ok,
            }),
        }
    }
}

impl Environment for SyntheticEnv {
    fn num_models(&self) -> usize {
        self.config.num_models()
    }

    fn reset(&mut self, seed: u64) -> Result<EnvStep> {
        let mixed = self.config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed;
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        let state = Self::categorical(&mut rng, self.state_probs.iter().copied());
        let mut ep = Episode {
            rng,
            state,
            t: 0,
            model: 0,
            last_u: 0.0,
            last_sound: true,
            routed_ok: true,
            large_ok: true,
            done: false,
        };
        let step = self.generate(&mut ep);
        ep.done = step.terminal;
        self.episode = Some(ep);
        Ok(step)
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        let k = self.num_models();
        let mut ep = self.episode.take().ok_or(Error::EpisodeInactive)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(Error::EpisodeInactive);
        }
        if let Err(e) = action.validate(ep.model, k) {
            self.episode = Some(ep);
            return Err(e);
        }
        let next = action.target(ep.model);
        let repaired = next > ep.model && ep.last_u < self.config.step_soundness(ep.state, next);
        ep.routed_ok &= ep.last_sound || repaired;
        ep.model = next;
        ep.t += 1;
        let step = self.generate(&mut ep);
        ep.done = step.terminal;
        self.episode = Some(ep);
        Ok(step)
    }

    fn current_model(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.model)
    }
}
