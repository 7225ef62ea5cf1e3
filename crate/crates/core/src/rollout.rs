//! Executed episodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::calibrate::CoverageEvent;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::features::Observation;
use crate::policy::{sample_from, RoutingPolicy};
use crate::trace::TerminalLabel;

/// One routing decision and the step it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedStep {
    /// Observation of the latest step when the decision was made.
    pub observation: Observation,
    pub action: Action,
    /// Probability the sampling policy gave `action`.
    pub behavior_prob: f64,
    /// Cost of the step generated by the chosen model.
    pub cost: f64,
    pub verifier_bit: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<LoggedStep>,
    /// Cost of the initial step (always model 0, not a decision).
    pub initial_cost: f64,
    pub initial_verifier_bit: Option<bool>,
    pub final_observation: Observation,
    pub terminal: TerminalLabel,
}

impl EpisodeLog {
    /// Number of routing decisions T_π.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.initial_cost + self.steps.iter().map(|s| s.cost).sum::<f64>()
    }

    /// Whether the verifier accepted every generated step; a missing
    /// judgment counts as not verified.
    pub fn all_steps_verified(&self) -> bool {
        self.initial_verifier_bit == Some(true) && self.steps.iter().all(|s| s.verifier_bit == Some(true))
    }

    pub fn coverage_event(&self) -> CoverageEvent {
        CoverageEvent {
            routed_correct: self.terminal.routed_correct,
            large_correct: self.terminal.large_model_correct,
            all_steps_verified: self.all_steps_verified(),
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.steps.iter().map(|s| &s.observation)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.steps {
            if !(s.behavior_prob > 0.0 && s.behavior_prob <= 1.0) {
                return Err(Error::Numeric(format!(
                    "behavior probability {} outside (0, 1]",
                    s.behavior_prob
                )));
            }
        }
        Ok(())
    }
}

/// Runs one episode, sampling every action from `policy` with `rng`.
pub fn run_episode<E, P, R>(env: &mut E, policy: &P, seed: u64, rng: &mut R) -> Result<EpisodeLog>
where
    E: Environment + ?Sized,
    P: RoutingPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let first = env.reset(seed)?;
    let mut log = EpisodeLog {
        steps: Vec::new(),
        initial_cost: first.cost,
        initial_verifier_bit: first.verifier_bit,
        final_observation: first.observation,
        terminal: TerminalLabel { routed_correct: false, large_model_correct: false },
    };
    let mut last = first;
    while !last.terminal {
        let obs = last.observation;
        let (action, behavior_prob) = sample_from(&policy.distribution(&obs), rng);
        last = env.step(action)?;
        log.steps.push(LoggedStep {
            observation: obs,
            action,
            behavior_prob,
            cost: last.cost,
            verifier_bit: last.verifier_bit,
        });
        log.final_observation = last.observation;
    }
    log.terminal = last
        .terminal_label
        .ok_or_else(|| Error::Validation("terminal step without a label".into()))?;
    Ok(log)
}
