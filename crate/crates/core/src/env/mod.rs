//! The routing environment contract and its two implementations.
//!
//! An episode starts with the initial step generated by model 0. Every
//! subsequent call to [`Environment::step`] takes the routing action for the
//! latest observed step: `continue` keeps the current model, `escalate(k)`
//! hands generation to model `k` for the rest of the episode. The selected
//! model generates the next step, and the episode ends when a final-answer
//! step has been generated.

mod exact;
mod replay;
mod synthetic;

pub use exact::{brute_force_values, brute_force_values_with, enumeration_size, StateValues, ValueTable, ENUMERATION_LIMIT};
pub use replay::{TraceEnv, TraceOrder};
pub use synthetic::{Emission, LatentState, SyntheticEnv, SyntheticEnvConfig};

pub use crate::action::Action;
use crate::error::Result;
use crate::features::Observation;
use crate::trace::TerminalLabel;

/// Result of generating one step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    /// Inference cost of the step just generated.
    pub cost: f64,
    /// Verifier judgment of the step just generated, when available.
    pub verifier_bit: Option<bool>,
    pub terminal: bool,
    pub terminal_label: Option<TerminalLabel>,
}

pub trait Environment {
    fn num_models(&self) -> usize;

    /// Starts an episode; the returned step is the initial step by model 0
    /// (its cost is part of the episode total).
    fn reset(&mut self, seed: u64) -> Result<EnvStep>;

    fn step(&mut self, action: Action) -> Result<EnvStep>;

    /// Index of the model that generated the latest step.
    fn current_model(&self) -> usize;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn num_models(&self) -> usize {
        (**self).num_models()
    }

    fn reset(&mut self, seed: u64) -> Result<EnvStep> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: Action) -> Result<EnvStep> {
        (**self).step(action)
    }

    fn current_model(&self) -> usize {
        (**self).current_model()
    }
}
