//! Online threshold calibration.
//!
//! [`CalibratorState::kappa`] follows the stochastic-approximation update
//! `κ ← κ + η_k (1 − covered − α)`: it rises by `η_k (1 − α)` after a
//! miscovered episode and falls by `η_k α` after a covered one. The router
//! escalates more as κ rises, so the probability threshold it applies to the
//! policy is `1 − κ` ([`CalibratorState::routing_threshold`]); the two
//! coincide at the default κ₀ = 0.5.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::PolicyHead;
use crate::policy::{Gamma, ThresholdPolicy};
use crate::rollout::run_episode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageEvent {
    pub routed_correct: bool,
    pub large_correct: bool,
    /// Every step of the trajectory was accepted by the verifier.
    pub all_steps_verified: bool,
}

/// `R_π = 1 ∨ R_M = 0`, or'ed with local verification when `use_verifier`.
pub fn coverage_bit(ev: CoverageEvent, use_verifier: bool) -> bool {
    ev.routed_correct || !ev.large_correct || (use_verifier && ev.all_steps_verified)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// η_k = η₀.
    Fixed,
    /// η_k = η₀ / √(k + 1).
    InverseSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratorState {
    pub kappa: f64,
    pub alpha: f64,
    pub step_base: f64,
    pub schedule: Schedule,
    pub iteration: u64,
    pub window_size: usize,
    pub coverage_window: VecDeque<bool>,
}

/// What one call to [`CalibratorState::update`] did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KappaUpdate {
    pub covered: bool,
    pub eta: f64,
    /// κ change before clamping.
    pub delta: f64,
    pub kappa: f64,
}

impl CalibratorState {
    pub const DEFAULT_WINDOW: usize = 1000;

    pub fn new(kappa: f64, alpha: f64, step_base: f64, schedule: Schedule) -> Result<Self> {
        let state = CalibratorState {
            kappa,
            alpha,
            step_base,
            schedule,
            iteration: 0,
            window_size: Self::DEFAULT_WINDOW,
            coverage_window: VecDeque::new(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa {} outside [0, 1]", self.kappa)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.step_base.is_finite() && self.step_base > 0.0) {
            return Err(Error::Config(format!("step size {} must be positive", self.step_base)));
        }
        Ok(())
    }

    /// η_k for the next update.
    pub fn step_size(&self) -> f64 {
        match self.schedule {
            Schedule::Fixed => self.step_base,
            Schedule::InverseSqrt => self.step_base / ((self.iteration + 1) as f64).sqrt(),
        }
    }

    /// Probability threshold applied to π by Π, S and Γ.
    pub fn routing_threshold(&self) -> f64 {
        1.0 - self.kappa
    }

    pub fn update(&mut self, covered: bool) -> KappaUpdate {
        let eta = self.step_size();
        let delta = eta * (1.0 - f64::from(u8::from(covered)) - self.alpha);
        self.kappa = (self.kappa + delta).clamp(0.0, 1.0);
        self.iteration += 1;
        if self.window_size > 0 {
            if self.coverage_window.len() == self.window_size {
                self.coverage_window.pop_front();
            }
            self.coverage_window.push_back(covered);
        }
        KappaUpdate { covered, eta, delta, kappa: self.kappa }
    }

    /// Miscoverage over the recent window, if any updates were made.
    pub fn window_miscoverage(&self) -> Option<f64> {
        let n = self.coverage_window.len();
        (n > 0).then(|| self.coverage_window.iter().filter(|c| !**c).count() as f64 / n as f64)
    }
}

pub fn update_kappa(state: &CalibratorState, ev: CoverageEvent, use_verifier: bool) -> CalibratorState {
    let mut next = state.clone();
    next.update(coverage_bit(ev, use_verifier));
    next
}

/// One row of the calibration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub iteration: u64,
    pub kappa: f64,
    pub covered: bool,
    pub running_miscoverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRun {
    pub state: CalibratorState,
    pub trace: Vec<CalibrationRow>,
    /// Episodes aborted by the environment (missing trace branches).
    pub skipped: usize,
}

impl CalibrationRun {
    /// Miscoverage over the last `n` episodes.
    pub fn trailing_miscoverage(&self, n: usize) -> f64 {
        let tail = &self.trace[self.trace.len().saturating_sub(n)..];
        tail.iter().filter(|r| !r.covered).count() as f64 / tail.len().max(1) as f64
    }

    /// Tab-separated trace: iteration, κ, coverage bit, running miscoverage.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tkappa\tcovered\trunning_miscoverage\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.iteration,
                r.kappa,
                u8::from(r.covered),
                r.running_miscoverage
            ));
        }
        out
    }
}

/// Routes `episodes` episodes with Γ at the current threshold, updating κ
/// after each. Episode `i` resets the environment with `seed_base + i`.
pub fn run_calibration<E: Environment + ?Sized>(
    env: &mut E,
    head: &PolicyHead,
    mut state: CalibratorState,
    episodes: usize,
    use_verifier: bool,
    seed_base: u64,
) -> Result<CalibrationRun> {
    state.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    let mut trace = Vec::with_capacity(episodes);
    let mut skipped = 0;
    let mut misses = 0usize;
    for i in 0..episodes {
        let tp = ThresholdPolicy::new(head.clone(), state.routing_threshold());
        let log = match run_episode(env, &Gamma(&tp), seed_base.wrapping_add(i as u64), &mut rng) {
            Ok(log) => log,
            Err(Error::MissingBranch { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let covered = coverage_bit(log.coverage_event(), use_verifier);
        state.update(covered);
        misses += usize::from(!covered);
        trace.push(CalibrationRow {
            iteration: state.iteration,
            kappa: state.kappa,
            covered,
            running_miscoverage: misses as f64 / trace.len().saturating_add(1) as f64,
        });
    }
    Ok(CalibrationRun { state, trace, skipped })
}
