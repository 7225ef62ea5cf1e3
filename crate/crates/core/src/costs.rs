//! FLOPs and API cost models, and accuracy / Accuracy-per-Cost reporting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{ApiPricing, ModelId, StepRecord};

/// FLOPs in units of 10^12 for `generated_tokens` tokens from a model with
/// `param_count` parameters, at 2N FLOPs per generated token.
pub fn flops_cost(param_count: u64, generated_tokens: u64) -> f64 {
    2.0 * param_count as f64 * generated_tokens as f64 / 1e12
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub input: u64,
    pub cached: u64,
    pub output: u64,
}

impl TokenCounts {
    pub fn new(input: u64, cached: u64, output: u64) -> Self {
        TokenCounts { input, cached, output }
    }

    pub fn of_step(step: &StepRecord) -> Self {
        TokenCounts {
            input: step.input_tokens_billed,
            cached: step.cached_tokens_billed,
            output: step.output_tokens_billed,
        }
    }
}

impl std::ops::AddAssign for TokenCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.input += rhs.input;
        self.cached += rhs.cached;
        self.output += rhs.output;
    }
}

/// API cost in US cents.
pub fn api_cost(pricing: &ApiPricing, tokens: TokenCounts) -> f64 {
    (tokens.input as f64 * pricing.input_per_mtok
        + tokens.cached as f64 * pricing.cached_input_per_mtok
        + tokens.output as f64 * pricing.output_per_mtok)
        / 1e6
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostBasis {
    Flops,
    Api,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyScale {
    Percent,
    Fraction,
}

impl AccuracyScale {
    /// Table convention: percent accuracy for FLOPs, fraction for API cents.
    pub fn conventional(basis: CostBasis) -> Self {
        match basis {
            CostBasis::Flops => AccuracyScale::Percent,
            CostBasis::Api => AccuracyScale::Fraction,
        }
    }

    pub fn apply(self, accuracy_fraction: f64) -> f64 {
        match self {
            AccuracyScale::Percent => 100.0 * accuracy_fraction,
            AccuracyScale::Fraction => accuracy_fraction,
        }
    }
}

/// Per-problem cost on both bases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub flops_e12: f64,
    pub api_cents: f64,
    pub tokens: TokenCounts,
}

impl CostBreakdown {
    pub fn on(&self, basis: CostBasis) -> f64 {
        match basis {
            CostBasis::Flops => self.flops_e12,
            CostBasis::Api => self.api_cents,
        }
    }

    /// Bills one step to the model that generated it. FLOPs count the
    /// generated (output) tokens; API cents use the model's pricing if any.
    pub fn add_step(&mut self, model: &ModelId, step: &StepRecord) {
        let tokens = TokenCounts::of_step(step);
        self.flops_e12 += flops_cost(model.param_count, tokens.output);
        if let Some(p) = &model.pricing {
            self.api_cents += api_cost(p, tokens);
        }
        self.tokens += tokens;
    }
}

/// Cost of one step on the chosen basis.
pub fn step_cost(model: &ModelId, step: &StepRecord, basis: CostBasis) -> f64 {
    let mut c = CostBreakdown::default();
    c.add_step(model, step);
    c.on(basis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of problems solved, in [0, 1].
    pub accuracy: f64,
    pub avg_cost: f64,
    /// Accuracy (in `accuracy_scale`) divided by `avg_cost`; `None` when the
    /// average cost is zero and accuracy is not.
    pub ac_ratio: Option<f64>,
    pub n_problems: usize,
    pub cost_basis: CostBasis,
    pub accuracy_scale: AccuracyScale,
}

/// Accuracy-per-Cost. Returns `None` for zero cost with nonzero accuracy.
pub fn ac_ratio(accuracy_fraction: f64, avg_cost: f64, scale: AccuracyScale) -> Option<f64> {
    let acc = scale.apply(accuracy_fraction);
    if avg_cost > 0.0 {
        Some(acc / avg_cost)
    } else if acc == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

pub fn eval_report(
    results: &[(bool, CostBreakdown)],
    basis: CostBasis,
    scale: AccuracyScale,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Validation("eval_report needs at least one result".into()));
    }
    let n = results.len() as f64;
    let accuracy = results.iter().filter(|(c, _)| *c).count() as f64 / n;
    let avg_cost = results.iter().map(|(_, c)| c.on(basis)).sum::<f64>() / n;
    Ok(EvalReport {
        accuracy,
        avg_cost,
        ac_ratio: ac_ratio(accuracy, avg_cost, scale),
        n_problems: results.len(),
        cost_basis: basis,
        accuracy_scale: scale,
    })
}
