//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{cmd_calibrate, cmd_evaluate, cmd_simulate, cmd_train};
use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "steproute", version, about = "Stepwise small/large model routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the routing policy and threshold jointly.
    Train(Common),
    /// Evaluate a checkpoint against fixed baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Recalibrate the threshold before evaluating.
        #[arg(long)]
        recalibrate: bool,
    },
    /// Calibrate the threshold of a trained checkpoint.
    Calibrate(Common),
    /// Sample fully expanded trace trees from a synthetic environment.
    Simulate(Common),
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg = cfg.with_out_dir(out.clone());
    }
    Ok(cfg)
}

/// Runs a parsed command and prints a one-line summary.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => {
            let out = cmd_train(&load(c)?)?;
            println!(
                "trained {} iterations; threshold {:.4}; checkpoint {}",
                out.checkpoint.iterations,
                out.checkpoint.routing_threshold,
                out.checkpoint_path.display()
            );
        }
        Command::Calibrate(c) => {
            let (ckpt, run) = cmd_calibrate(&load(c)?)?;
            println!(
                "calibrated over {} episodes; threshold {:.4}; trailing miscoverage {:.4}",
                run.trace.len(),
                ckpt.routing_threshold,
                run.trailing_miscoverage(1000)
            );
        }
        Command::Evaluate { common, recalibrate } => {
            let s = cmd_evaluate(&load(common)?, *recalibrate)?;
            println!(
                "learned: accuracy {:.4}, avg cost {:.4}, coverage {:.4}",
                s.learned.report.accuracy, s.learned.report.avg_cost, s.learned.coverage
            );
        }
        Command::Simulate(c) => {
            let (path, trees) = cmd_simulate(&load(c)?)?;
            println!("wrote {} trees to {}", trees.len(), path.display());
        }
    }
    Ok(())
}

pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
