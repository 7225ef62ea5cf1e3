//! Exact expected cost and coverage of the fixed routing baselines, by full
//! enumeration of a small synthetic environment.

use steproute::env::{brute_force_values, Emission, LatentState, SyntheticEnvConfig};
use steproute::policy::{AlwaysContinue, AlwaysEscalate, UncertaintyThreshold};

fn main() -> steproute::Result<()> {
    let state = |difficulty: f64, success: [f64; 2]| LatentState {
        weight: 1.0,
        difficulty: Some(difficulty),
        success: success.to_vec(),
        sound: Emission { mean: 1.0, spread: 0.8 },
        unsound: Emission { mean: -1.0, spread: 0.8 },
    };
    let config = SyntheticEnvConfig {
        states: vec![state(0.0, [0.9, 0.97]), state(1.0, [0.3, 0.93])],
        step_costs: vec![1.0, 4.67],
        step_tokens: vec![],
        horizon: 5,
        verifier_accuracy: 0.95,
        emission_levels: 5,
        seed: 0,
        t_max: 5,
    };
    let show = |name: &str, v: steproute::env::ValueTable| {
        println!("{name:<24} cost {:>7.3}  accuracy {:.4}  coverage {:.4}", v.expected_cost, v.p_routed_correct, v.coverage());
    };
    show("always continue", brute_force_values(&config, &AlwaysContinue { num_models: 2 })?);
    show("always escalate", brute_force_values(&config, &AlwaysEscalate { num_models: 2 })?);
    for threshold in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let policy = UncertaintyThreshold { num_models: 2, threshold };
        show(&format!("confidence below {threshold}"), brute_force_values(&config, &policy)?);
    }
    Ok(())
}
