//! Observation vectors and step-level uncertainty scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::StepRecord;

/// Feature dimensionality of [`Observation::features`].
pub const FEATURE_DIM: usize = 6;

/// Step length (tokens) at which the length feature saturates.
pub const STEP_LEN_CAP: f64 = 512.0;

/// Imputed difficulty when a problem carries none.
pub const DEFAULT_DIFFICULTY: f64 = 0.5;

/// What the routing policy sees after a step.
///
/// The six feature fields, in network-input order, are followed by two
/// bookkeeping fields that never enter the network: the integer model index
/// (to mask unavailable actions) and the raw, unstandardized uncertainty
/// (used by fixed-threshold baselines).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub uncertainty: f64,
    pub step_index_norm: f64,
    pub difficulty: f64,
    pub is_final_answer: f64,
    pub step_len_norm: f64,
    pub current_model_frac: f64,
    pub model_index: usize,
    pub raw_uncertainty: f64,
}

impl Observation {
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        [
            self.uncertainty,
            self.step_index_norm,
            self.difficulty,
            self.is_final_answer,
            self.step_len_norm,
            self.current_model_frac,
        ]
    }
}

/// Mean of the per-token max logits over math positions (open-weights score).
/// An all-false mask falls back to every position.
pub fn score_open(max_logits: &[f64], math_mask: &[bool]) -> Result<f64> {
    check_rows(max_logits.len(), math_mask.len())?;
    let (sum, n) = masked(max_logits, math_mask).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    Ok(sum / n as f64)
}

/// Minimum top-1 probability over math positions (API score).
/// An all-false mask falls back to every position.
pub fn score_api(top1_probs: &[f64], math_mask: &[bool]) -> Result<f64> {
    check_rows(top1_probs.len(), math_mask.len())?;
    if let Some(p) = top1_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    Ok(masked(top1_probs, math_mask).fold(f64::INFINITY, f64::min))
}

fn check_rows(rows: usize, mask: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::Validation("uncertainty score needs at least one token".into()));
    }
    if rows != mask {
        return Err(Error::Dimension { expected: rows, actual: mask });
    }
    Ok(())
}

fn masked<'a>(values: &'a [f64], mask: &'a [bool]) -> impl Iterator<Item = f64> + 'a {
    let any = mask.iter().any(|m| *m);
    values
        .iter()
        .zip(mask)
        .filter(move |(_, m)| !any || **m)
        .map(|(v, _)| *v)
}

/// Standardization statistics for the uncertainty feature, fitted once on
/// training data and frozen afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }
}

impl NormStats {
    /// Population mean and standard deviation (Welford). A degenerate sample
    /// (fewer than two values or zero spread) keeps unit scale.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        for x in values {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        if n == 0 {
            return NormStats::default();
        }
        let var = m2 / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        NormStats { mean, std }
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Builds observations for a pool of `num_models` models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBuilder {
    pub t_max: usize,
    pub num_models: usize,
    pub norm: NormStats,
}

impl FeatureBuilder {
    pub fn new(t_max: usize, num_models: usize, norm: NormStats) -> Self {
        FeatureBuilder { t_max, num_models, norm }
    }

    /// Observation after step `t` (0 for the initial step) generated by `model_index`.
    pub fn build(
        &self,
        step: &StepRecord,
        t: usize,
        difficulty: Option<f64>,
        model_index: usize,
    ) -> Observation {
        self.build_raw(
            step.uncertainty,
            step.text_len_tokens,
            step.is_final_answer,
            t,
            difficulty,
            model_index,
        )
    }

    pub fn build_raw(
        &self,
        uncertainty: f64,
        len_tokens: u64,
        is_final: bool,
        t: usize,
        difficulty: Option<f64>,
        model_index: usize,
    ) -> Observation {
        let current_model_frac = if self.num_models > 1 {
            model_index as f64 / (self.num_models - 1) as f64
        } else {
            0.0
        };
        Observation {
            uncertainty: self.norm.standardize(uncertainty),
            step_index_norm: t as f64 / self.t_max as f64,
            difficulty: difficulty.unwrap_or(DEFAULT_DIFFICULTY),
            is_final_answer: if is_final { 1.0 } else { 0.0 },
            step_len_norm: (len_tokens as f64 / STEP_LEN_CAP).min(1.0),
            current_model_frac,
            model_index,
            raw_uncertainty: uncertainty,
        }
    }
}
