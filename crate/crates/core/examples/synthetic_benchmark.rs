//! Trains a threshold policy on the shipped synthetic benchmark, recalibrates
//! its threshold and compares it with the fixed baselines.
//!
//! cargo run --release --example synthetic_benchmark [-- CONFIG [OUT_DIR]]

use std::path::PathBuf;

use steproute::commands::{cmd_evaluate, cmd_train};
use steproute::config::RunConfig;

fn main() -> steproute::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic_benchmark.toml"));
    let mut cfg = RunConfig::load(&config)?;
    if let Some(out) = args.next() {
        cfg = cfg.with_out_dir(out.into());
    }

    let trained = cmd_train(&cfg)?;
    println!("checkpoint: {}", trained.checkpoint_path.display());
    println!("P(large model wrong) = {:.4}", trained.p_large_wrong);

    let summary = cmd_evaluate(&cfg, true)?;
    println!("routing threshold after recalibration: {:.4}", summary.routing_threshold);
    println!("{:<28} {:>10} {:>10} {:>10}", "policy", "cost", "accuracy", "coverage");
    let rows = [&summary.learned, &summary.always_small, &summary.always_large]
        .into_iter()
        .chain(&summary.uncertainty_thresholds);
    for p in rows {
        if let Some(e) = p.exact {
            println!("{:<28} {:>10.3} {:>10.4} {:>10.4}", p.name, e.expected_cost, e.accuracy, e.coverage);
        }
    }
    Ok(())
}
