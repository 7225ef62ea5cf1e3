//! Exact expected cost and coverage of a policy on a synthetic environment,
//! by enumeration over latent states, step outcomes and score levels.

use serde::Serialize;

use super::synthetic::SyntheticEnvConfig;
use crate::action::Action;
use crate::error::{Error, Result};
use crate::features::FeatureBuilder;
use crate::policy::RoutingPolicy;

/// Largest enumeration (in policy evaluations) [`brute_force_values`] accepts.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Exact quantities for one latent state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StateValues {
    pub probability: f64,
    pub expected_cost: f64,
    pub p_routed_correct: f64,
    pub p_large_correct: f64,
    /// ℙ(R_Π = 1 ∧ R_M = 1).
    pub p_both_correct: f64,
}

impl StateValues {
    /// ℙ(R_Π = 1 ∨ R_M = 0).
    pub fn coverage(&self) -> f64 {
        1.0 - (self.p_large_correct - self.p_both_correct)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValueTable {
    pub states: Vec<StateValues>,
    pub expected_cost: f64,
    pub p_routed_correct: f64,
    pub p_large_correct: f64,
    pub p_both_correct: f64,
}

impl ValueTable {
    pub fn coverage(&self) -> f64 {
        1.0 - (self.p_large_correct - self.p_both_correct)
    }

    pub fn miscoverage(&self) -> f64 {
        self.p_large_correct - self.p_both_correct
    }
}

/// Number of policy evaluations the enumeration needs.
pub fn enumeration_size(config: &SyntheticEnvConfig) -> u64 {
    let k = config.num_models() as u64;
    let steps = config.horizon as u64 + 1;
    config.num_states() as u64 * steps * k * (k + 1) * config.emission_levels as u64
}

/// [`brute_force_values_with`] using the config's exact feature statistics.
pub fn brute_force_values<P: RoutingPolicy + ?Sized>(config: &SyntheticEnvConfig, policy: &P) -> Result<ValueTable> {
    config.validate()?;
    brute_force_values_with(config, &config.feature_builder(), policy)
}

/// Exact expected episode cost (including the initial step) and outcome
/// probabilities when `policy` routes every step of [`SyntheticEnv`]
/// episodes built with `features`.
///
/// [`SyntheticEnv`]: super::SyntheticEnv
pub fn brute_force_values_with<P: RoutingPolicy + ?Sized>(
    config: &SyntheticEnvConfig,
    features: &FeatureBuilder,
    policy: &P,
) -> Result<ValueTable> {
    config.validate()?;
    let estimate = enumeration_size(config);
    if estimate > ENUMERATION_LIMIT {
        return Err(Error::TooLarge { estimate, limit: ENUMERATION_LIMIT });
    }
    let levels = config.levels();
    let mut states = Vec::with_capacity(config.num_states());
    for (s, ps) in config.state_probs().into_iter().enumerate() {
        let mut v = StateDp::new(config, features, &levels, s).value(policy, 0, 0);
        v.probability = ps;
        states.push(v);
    }
    let sum = |f: fn(&StateValues) -> f64| states.iter().map(|v| v.probability * f(v)).sum::<f64>();
    Ok(ValueTable {
        expected_cost: sum(|v| v.expected_cost),
        p_routed_correct: sum(|v| v.p_routed_correct),
        p_large_correct: sum(|v| v.p_large_correct),
        p_both_correct: sum(|v| v.p_both_correct),
        states,
    })
}

struct StateDp<'a> {
    config: &'a SyntheticEnvConfig,
    features: &'a FeatureBuilder,
    levels: &'a [(f64, f64)],
    state: usize,
    /// Per-step soundness probability of each model.
    q: Vec<f64>,
    /// (probability, representative u) of each u-interval between the q's.
    intervals: Vec<(f64, f64)>,
    memo: Vec<Option<StateValues>>,
}

impl<'a> StateDp<'a> {
    fn new(config: &'a SyntheticEnvConfig, features: &'a FeatureBuilder, levels: &'a [(f64, f64)], state: usize) -> Self {
        let k = config.num_models();
        let q: Vec<f64> = (0..k).map(|m| config.step_soundness(state, m)).collect();
        let mut cuts: Vec<f64> = q.iter().copied().chain([0.0, 1.0]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let intervals = cuts
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[1] - w[0], 0.5 * (w[0] + w[1])))
            .collect();
        StateDp {
            config,
            features,
            levels,
            state,
            q,
            intervals,
            memo: vec![None; (config.horizon + 1) * k],
        }
    }

    /// Values from step `t` onward when model `k` generates step `t`.
    fn value<P: RoutingPolicy + ?Sized>(&mut self, policy: &P, t: usize, k: usize) -> StateValues {
        let key = t * self.config.num_models() + k;
        if let Some(v) = self.memo[key] {
            return v;
        }
        let top = self.config.num_models() - 1;
        let last = t == self.config.horizon;
        let mut out = StateValues { expected_cost: self.config.step_costs[k], ..Default::default() };
        for j in 0..self.intervals.len() {
            let (pu, u) = self.intervals[j];
            let sound = u < self.q[k];
            let large_sound = u < self.q[top];
            for l in 0..self.levels.len() {
                let (z, pz) = self.levels[l];
                let w = pu * pz;
                if last {
                    out.p_routed_correct += w * f64::from(u8::from(sound));
                    out.p_large_correct += w * f64::from(u8::from(large_sound));
                    out.p_both_correct += w * f64::from(u8::from(sound && large_sound));
                    continue;
                }
                let score = self.config.emission_value(self.state, sound, z);
                let obs = self.config.observation(self.features, self.state, t, k, score);
                let dist = policy.distribution(&obs);
                for (a, pa) in dist.actions.iter().zip(&dist.probs) {
                    if *pa == 0.0 {
                        continue;
                    }
                    let next = a.target(k);
                    let repaired = matches!(a, Action::Escalate(_)) && u < self.q[next];
                    let ok_here = sound || repaired;
                    let rest = self.value(policy, t + 1, next);
                    let w = w * pa;
                    out.expected_cost += w * rest.expected_cost;
                    if ok_here {
                        out.p_routed_correct += w * rest.p_routed_correct;
                    }
                    if large_sound {
                        out.p_large_correct += w * rest.p_large_correct;
                        if ok_here {
                            out.p_both_correct += w * rest.p_both_correct;
                        }
                    }
                }
            }
        }
        self.memo[key] = Some(out);
        out
    }
}
