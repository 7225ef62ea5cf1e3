//! Online calibration of the routing threshold for a fixed policy: κ moves
//! up after every miss and down after every covered episode until the
//! miscoverage settles at α.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steproute::calibrate::{run_calibration, CalibratorState, Schedule};
use steproute::env::{Emission, LatentState, SyntheticEnv, SyntheticEnvConfig};
use steproute::nn::PolicyHead;

fn state(difficulty: f64, success: [f64; 2]) -> LatentState {
    LatentState {
        weight: 1.0,
        difficulty: Some(difficulty),
        success: success.to_vec(),
        sound: Emission { mean: 1.0, spread: 0.8 },
        unsound: Emission { mean: -1.0, spread: 0.8 },
    }
}

fn main() -> steproute::Result<()> {
    let config = SyntheticEnvConfig {
        states: vec![state(0.0, [0.85, 0.97]), state(1.0, [0.35, 0.9])],
        step_costs: vec![1.0, 4.0],
        step_tokens: vec![],
        horizon: 4,
        verifier_accuracy: 0.9,
        emission_levels: 7,
        seed: 11,
        t_max: 4,
    };
    let mut env = SyntheticEnv::new(config)?;
    let mut head = PolicyHead::new(2, &mut ChaCha8Rng::seed_from_u64(4));
    head.mlp.params.iter_mut().for_each(|p| *p *= 20.0);

    let alpha = 0.02;
    let start = CalibratorState::new(0.5, alpha, 0.1, Schedule::InverseSqrt)?;
    let run = run_calibration(&mut env, &head, start, 20_000, false, 1)?;
    for row in run.trace.iter().step_by(2_000) {
        println!("episode {:>6}  kappa {:.4}  running miscoverage {:.4}", row.iteration, row.kappa, row.running_miscoverage);
    }
    println!(
        "final kappa {:.4}, threshold {:.4}, miscoverage over the last 10000 episodes {:.4} (alpha {alpha})",
        run.state.kappa,
        run.state.routing_threshold(),
        run.trailing_miscoverage(10_000)
    );
    Ok(())
}
