//! Samples fully expanded trace trees from a synthetic environment and
//! writes them in the trace file format.

use steproute::commands::{full_tree_size, sample_tree};
use steproute::env::{Emission, LatentState, SyntheticEnvConfig};
use steproute::trace::{encode_traces, parse_traces};

fn main() -> steproute::Result<()> {
    let state = |difficulty: f64, success: [f64; 2]| LatentState {
        weight: 1.0,
        difficulty: Some(difficulty),
        success: success.to_vec(),
        sound: Emission { mean: 1.0, spread: 1.0 },
        unsound: Emission { mean: -1.0, spread: 1.0 },
    };
    let config = SyntheticEnvConfig {
        states: vec![state(0.0, [0.9, 0.97]), state(1.0, [0.3, 0.93])],
        step_costs: vec![1.0, 4.67],
        step_tokens: vec![],
        horizon: 3,
        verifier_accuracy: 0.95,
        emission_levels: 5,
        seed: 0,
        t_max: 3,
    };
    let trees: Vec<_> = (0..4).map(|i| sample_tree(&config, format!("sim-{i}"), i)).collect();
    println!("nodes per full tree: {}", full_tree_size(2, config.horizon));
    for t in &trees {
        let solved = t.leaves().iter().filter(|l| l.routed_correct).count();
        println!("{}: {} leaves, {} solved", t.problem_id, t.leaf_count(), solved);
    }
    let text = encode_traces(&trees);
    assert_eq!(parse_traces(&text, config.t_max)?, trees);
    println!("{} bytes of JSONL; first line starts {}", text.len(), &text[..80]);
    Ok(())
}
