//! Canonical-JSON checkpoints: networks, normalization statistics and the
//! calibrated threshold, everything evaluation needs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibratorState;
use crate::error::{Error, Result};
use crate::features::{FeatureBuilder, NormStats, FEATURE_DIM};
use crate::nn::{CriticHead, PolicyHead};
use crate::policy::ThresholdPolicy;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub feature_dim: usize,
    pub num_models: usize,
    pub t_max: usize,
    pub norm: NormStats,
    pub policy: PolicyHead,
    pub cost_critic: CriticHead,
    pub coverage_critic: CriticHead,
    /// Probability threshold Γ applies to π(escalate).
    pub routing_threshold: f64,
    pub calibrator: CalibratorState,
    /// Training iterations completed.
    pub iterations: usize,
}

impl Checkpoint {
    pub fn features(&self) -> FeatureBuilder {
        FeatureBuilder::new(self.t_max, self.num_models, self.norm)
    }

    pub fn threshold_policy(&self) -> ThresholdPolicy {
        ThresholdPolicy::new(self.policy.clone(), self.routing_threshold)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Checkpoint(m));
        if self.version != CHECKPOINT_VERSION {
            return fail(format!("unsupported checkpoint version {}", self.version));
        }
        if self.feature_dim != FEATURE_DIM {
            return fail(format!("feature dimension {} does not match {FEATURE_DIM}", self.feature_dim));
        }
        for (name, mlp) in [
            ("policy", &self.policy.mlp),
            ("cost critic", &self.cost_critic.mlp),
            ("coverage critic", &self.coverage_critic.mlp),
        ] {
            mlp.validate().map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if mlp.input_dim() != self.feature_dim {
                return fail(format!("{name} expects {} inputs, not {}", mlp.input_dim(), self.feature_dim));
            }
        }
        if self.policy.num_models() != self.num_models {
            return fail(format!("policy has {} outputs for {} models", self.policy.num_models(), self.num_models));
        }
        if self.cost_critic.mlp.output_dim() != 1 || self.coverage_critic.mlp.output_dim() != 1 {
            return fail("critics must have a scalar output".into());
        }
        if !(0.0..=1.0).contains(&self.routing_threshold) {
            return fail(format!("routing threshold {} outside [0, 1]", self.routing_threshold));
        }
        if !(self.norm.std > 0.0 && self.norm.mean.is_finite() && self.norm.std.is_finite()) {
            return fail("invalid normalization statistics".into());
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys, shortest round-tripping floats).
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("checkpoint serializes");
        let mut s = serde_json::to_string(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
