//! Replays recorded trace trees: every routing decision follows a branch
//! that was generated offline, and costs are billed from its token counts.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steproute::costs::CostBasis;
use steproute::env::TraceEnv;
use steproute::features::{FeatureBuilder, NormStats};
use steproute::policy::{AlwaysContinue, AlwaysEscalate, RoutingPolicy, UncertaintyThreshold};
use steproute::rollout::run_episode;
use steproute::trace::load_trace_file;

fn main() -> steproute::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/gsm8k_mini.jsonl"));
    let trees = load_trace_file(&path)?;
    println!("{} trees from {}", trees.len(), path.display());
    let norm = NormStats::fit(trees.iter().flat_map(|t| t.steps()).map(|s| s.uncertainty));

    let policies: [(&str, Box<dyn RoutingPolicy>); 3] = [
        ("always continue", Box::new(AlwaysContinue { num_models: 2 })),
        ("always escalate", Box::new(AlwaysEscalate { num_models: 2 })),
        ("confidence below 0.6", Box::new(UncertaintyThreshold { num_models: 2, threshold: 0.6 })),
    ];
    for basis in [CostBasis::Flops, CostBasis::Api] {
        for (name, policy) in &policies {
            let mut env = TraceEnv::new(trees.clone(), FeatureBuilder::new(8, 2, norm), basis)?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (mut cost, mut correct, mut done) = (0.0, 0, 0);
            for seed in 0..trees.len() as u64 {
                // a policy can reach a branch the recorder never expanded
                let Ok(log) = run_episode(&mut env, policy.as_ref(), seed, &mut rng) else { continue };
                cost += log.total_cost();
                correct += usize::from(log.terminal.routed_correct);
                done += 1;
            }
            println!(
                "{:<6} {name:<20} solved {correct}/{done}, mean cost {:.5}, missing branches {}",
                format!("{basis:?}"),
                cost / done.max(1) as f64,
                env.missing_branches()
            );
        }
    }
    Ok(())
}
