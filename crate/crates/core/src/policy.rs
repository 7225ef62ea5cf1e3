//! Threshold-filtered routing: the action set Π_{π,κ}, its uniform
//! distribution S_{π,κ}, behavior sampling from π, and the deterministic
//! inference rule Γ.

use rand::Rng;

use crate::action::Action;
use crate::features::Observation;
use crate::nn::{ActionDist, PolicyHead};

/// Anything that maps an observation to a distribution over the actions
/// available there.
pub trait RoutingPolicy {
    fn distribution(&self, obs: &Observation) -> ActionDist;
}

impl RoutingPolicy for PolicyHead {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        self.probs(obs)
    }
}

impl<P: RoutingPolicy + ?Sized> RoutingPolicy for &P {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        (**self).distribution(obs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub head: PolicyHead,
    pub kappa: f64,
}

impl ThresholdPolicy {
    pub fn new(head: PolicyHead, kappa: f64) -> Self {
        assert!(kappa.is_finite() && (0.0..=1.0).contains(&kappa), "kappa must lie in [0, 1]");
        ThresholdPolicy { head, kappa }
    }

    /// Actions with π(a|obs) ≥ κ, or the argmax action when none clears κ.
    pub fn action_set(&self, obs: &Observation) -> Vec<Action> {
        action_set_of(&self.head.probs(obs), self.kappa)
    }

    /// S_{π,κ}: uniform over [`action_set`](Self::action_set), zero elsewhere.
    pub fn filtered_distribution(&self, obs: &Observation) -> ActionDist {
        filtered_of(&self.head.probs(obs), self.kappa)
    }

    /// Γ: escalate iff an escalation's probability clears κ (to the most
    /// capable such model when K > 2), otherwise continue.
    pub fn route_inference(&self, obs: &Observation) -> Action {
        route_of(&self.head.probs(obs), self.kappa)
    }
}

pub(crate) fn action_set_of(pi: &ActionDist, kappa: f64) -> Vec<Action> {
    let set: Vec<Action> = pi
        .actions
        .iter()
        .zip(&pi.probs)
        .filter(|(_, p)| **p >= kappa)
        .map(|(a, _)| *a)
        .collect();
    if set.is_empty() {
        vec![pi.argmax()]
    } else {
        set
    }
}

pub(crate) fn filtered_of(pi: &ActionDist, kappa: f64) -> ActionDist {
    let set = action_set_of(pi, kappa);
    let w = 1.0 / set.len() as f64;
    let probs = pi
        .actions
        .iter()
        .map(|a| if set.contains(a) { w } else { 0.0 })
        .collect();
    ActionDist { actions: pi.actions.clone(), probs }
}

pub(crate) fn route_of(pi: &ActionDist, kappa: f64) -> Action {
    pi.actions
        .iter()
        .zip(&pi.probs)
        .filter(|(a, p)| a.is_escalation() && **p >= kappa)
        .map(|(a, _)| *a)
        .max()
        .unwrap_or(Action::Continue)
}

/// Samples a ~ π(·|obs) and returns it with the exact probability used.
pub fn behavior_sample<R: Rng + ?Sized>(head: &PolicyHead, obs: &Observation, rng: &mut R) -> (Action, f64) {
    sample_from(&head.probs(obs), rng)
}

pub fn sample_from<R: Rng + ?Sized>(dist: &ActionDist, rng: &mut R) -> (Action, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in dist.actions.iter().zip(&dist.probs) {
        acc += p;
        if u < acc {
            return (*a, *p);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let last = dist
        .probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(dist.probs.len() - 1);
    (dist.actions[last], dist.probs[last])
}

fn one_hot(obs: &Observation, num_models: usize, chosen: Action) -> ActionDist {
    let actions = Action::available(obs.model_index, num_models);
    let probs = actions.iter().map(|a| if *a == chosen { 1.0 } else { 0.0 }).collect();
    ActionDist { actions, probs }
}

/// S_{π,κ} as a [`RoutingPolicy`].
pub struct Filtered<'a>(pub &'a ThresholdPolicy);

impl RoutingPolicy for Filtered<'_> {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        self.0.filtered_distribution(obs)
    }
}

/// Γ as a (deterministic) [`RoutingPolicy`].
pub struct Gamma<'a>(pub &'a ThresholdPolicy);

impl RoutingPolicy for Gamma<'_> {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        one_hot(obs, self.0.head.num_models(), self.0.route_inference(obs))
    }
}

/// Never escalates.
pub struct AlwaysContinue {
    pub num_models: usize,
}

impl RoutingPolicy for AlwaysContinue {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        one_hot(obs, self.num_models, Action::Continue)
    }
}

/// Escalates to the top model at the first decision.
pub struct AlwaysEscalate {
    pub num_models: usize,
}

impl RoutingPolicy for AlwaysEscalate {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        let top = self.num_models - 1;
        let a = if obs.model_index < top { Action::Escalate(top) } else { Action::Continue };
        one_hot(obs, self.num_models, a)
    }
}

/// Escalates to the top model whenever the raw confidence score of the
/// latest step falls below `threshold`.
pub struct UncertaintyThreshold {
    pub num_models: usize,
    pub threshold: f64,
}

impl RoutingPolicy for UncertaintyThreshold {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        let top = self.num_models - 1;
        let a = if obs.model_index < top && obs.raw_uncertainty < self.threshold {
            Action::Escalate(top)
        } else {
            Action::Continue
        };
        one_hot(obs, self.num_models, a)
    }
}

/// Uniform over the available actions.
pub struct UniformRandom {
    pub num_models: usize,
}

impl RoutingPolicy for UniformRandom {
    fn distribution(&self, obs: &Observation) -> ActionDist {
        let actions = Action::available(obs.model_index, self.num_models);
        let w = 1.0 / actions.len() as f64;
        ActionDist { probs: vec![w; actions.len()], actions }
    }
}
