//! Stepwise routing between a small and a large language model, cast as a
//! constrained MDP: a threshold policy trained with constrained
//! trust-region updates and V-trace off-policy correction, an online
//! threshold calibrator that targets a coverage level, and accuracy/cost
//! metrics under FLOPs and API pricing.

pub mod action;
pub mod calibrate;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod costs;
pub mod cpo;
pub mod env;
pub mod error;
pub mod features;
pub mod nn;
pub mod policy;
pub mod rollout;
pub mod trace;
pub mod train;
pub mod vtrace;

pub use action::Action;
pub use error::{Error, Result};
