//! Run configuration: one TOML file with nested sections, plus CLI overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::calibrate::{CalibratorState, Schedule};
use crate::costs::CostBasis;
use crate::cpo::CpoConfig;
use crate::env::SyntheticEnvConfig;
use crate::error::{Error, Result};
use crate::train::TrainSettings;
use crate::trace::T_MAX;
use crate::vtrace::VTraceConfig;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub train: PathBuf,
    pub cal: PathBuf,
    pub eval: PathBuf,
    #[serde(default = "default_basis")]
    pub cost_basis: CostBasis,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
}

fn default_basis() -> CostBasis {
    CostBasis::Flops
}

fn default_t_max() -> usize {
    T_MAX
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default)]
    pub synthetic: Option<SyntheticEnvConfig>,
    #[serde(default)]
    pub traces: Option<TraceSpec>,
}

/// Resolved environment source.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvSource {
    Synthetic(SyntheticEnvConfig),
    Traces(TraceSpec),
}

/// Threshold updates interleaved with training.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub kappa0: f64,
    pub step: f64,
    pub schedule: Schedule,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { kappa0: 0.5, step: 0.1, schedule: Schedule::Fixed }
    }
}

/// Post-training calibration of a frozen policy (`calibrate`, `evaluate --recalibrate`).
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecalibrationSettings {
    pub episodes: usize,
    pub step: f64,
    pub schedule: Schedule,
    pub use_verifier: bool,
}

impl Default for RecalibrationSettings {
    fn default() -> Self {
        RecalibrationSettings { episodes: 20_000, step: 0.1, schedule: Schedule::InverseSqrt, use_verifier: false }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    /// Sampled problems for per-problem rows (synthetic environments).
    pub episodes: usize,
    /// Raw-uncertainty thresholds for the fixed-threshold baseline; empty
    /// picks them from the data.
    pub thresholds: Vec<f64>,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings { episodes: 2000, thresholds: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub problems: usize,
    /// Output trace file, relative to the output directory.
    pub output: PathBuf,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { problems: 100, output: PathBuf::from("simulated.jsonl") }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    env: EnvSpec,
    #[serde(default)]
    cpo: CpoConfig,
    #[serde(default)]
    vtrace: VTraceConfig,
    #[serde(default)]
    calibration: CalibrationSettings,
    #[serde(default)]
    train: TrainSettings,
    #[serde(default = "default_p_large_wrong_episodes")]
    p_large_wrong_episodes: usize,
    #[serde(default)]
    recalibration: RecalibrationSettings,
    #[serde(default)]
    evaluate: EvaluateSettings,
    #[serde(default)]
    simulate: SimulateSettings,
}

fn default_p_large_wrong_episodes() -> usize {
    1000
}

/// A validated run configuration with paths resolved against the config
/// file's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub env: EnvSource,
    pub cpo: CpoConfig,
    pub vtrace: VTraceConfig,
    pub calibration: CalibrationSettings,
    pub train: TrainSettings,
    /// Episodes used to estimate ℙ(R_M = 0) on a synthetic calibration stream.
    pub p_large_wrong_episodes: usize,
    pub recalibration: RecalibrationSettings,
    pub evaluate: EvaluateSettings,
    pub simulate: SimulateSettings,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses TOML text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let env = match (raw.env.synthetic, raw.env.traces) {
            (Some(s), None) => {
                s.validate()?;
                EnvSource::Synthetic(s)
            }
            (None, Some(mut t)) => {
                for p in [&mut t.train, &mut t.cal, &mut t.eval] {
                    *p = base.join(&*p);
                    if !p.is_file() {
                        return Err(Error::Config(format!("trace file {} does not exist", p.display())));
                    }
                }
                EnvSource::Traces(t)
            }
            _ => return Err(Error::Config("[env] needs exactly one of `synthetic` or `traces`".into())),
        };
        let out_dir = base.join(raw.out_dir.unwrap_or_else(|| PathBuf::from("out")));
        let checkpoint = raw.checkpoint.map(|c| base.join(c));
        let mut cfg = RunConfig {
            seed: raw.seed,
            checkpoint: PathBuf::new(),
            out_dir,
            env,
            cpo: raw.cpo,
            vtrace: raw.vtrace,
            calibration: raw.calibration,
            train: raw.train,
            p_large_wrong_episodes: raw.p_large_wrong_episodes,
            recalibration: raw.recalibration,
            evaluate: raw.evaluate,
            simulate: raw.simulate,
        };
        cfg.set_checkpoint(checkpoint);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_checkpoint(&mut self, explicit: Option<PathBuf>) {
        self.checkpoint = explicit.unwrap_or_else(|| self.out_dir.join("checkpoint.json"));
    }

    /// Replaces the output directory; a default checkpoint path follows it.
    pub fn with_out_dir(mut self, out_dir: PathBuf) -> Self {
        let default_ckpt = self.checkpoint == self.out_dir.join("checkpoint.json");
        self.out_dir = out_dir;
        if default_ckpt {
            self.set_checkpoint(None);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.cpo.validate()?;
        self.vtrace.validate()?;
        self.train.validate()?;
        self.initial_calibrator()?;
        if self.recalibration.step <= 0.0 {
            return Err(Error::Config("recalibration.step must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_calibrator(&self) -> Result<CalibratorState> {
        let c = &self.calibration;
        CalibratorState::new(c.kappa0, self.cpo.alpha, c.step, c.schedule)
    }
}
