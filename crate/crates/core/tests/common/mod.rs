#![allow(dead_code)]

pub mod grad;
pub mod kkt;
pub mod mdp;
pub mod tables;

pub use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use steproute::env::{Emission, LatentState, SyntheticEnvConfig};
use steproute::features::Observation;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_obs<R: Rng>(rng: &mut R, num_models: usize) -> Observation {
    let model_index = rng.random_range(0..num_models);
    Observation {
        uncertainty: rng.random_range(-2.0..2.0),
        step_index_norm: rng.random_range(0.0..1.0),
        difficulty: rng.random_range(0.0..1.0),
        is_final_answer: if rng.random_bool(0.2) { 1.0 } else { 0.0 },
        step_len_norm: rng.random_range(0.0..1.0),
        current_model_frac: if num_models > 1 { model_index as f64 / (num_models - 1) as f64 } else { 0.0 },
        model_index,
        raw_uncertainty: rng.random_range(-2.0..2.0),
    }
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error with a floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference of `f` along direction `v` at step `h`.
pub fn directional_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, bi)| {
        let mut r = row.clone();
        r.push(*bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|i, j| m[*i][col].abs().total_cmp(&m[*j][col].abs())).unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    x
}

/// A random symmetric positive definite matrix `QᵀQ + εI`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let q: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, n)).collect();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| q[k][i] * q[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }).collect())
        .collect()
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

pub fn state(difficulty: f64, success: [f64; 2], spread: f64) -> LatentState {
    LatentState {
        weight: 1.0,
        difficulty: Some(difficulty),
        success: success.to_vec(),
        sound: Emission { mean: 1.0, spread },
        unsound: Emission { mean: -1.0, spread },
    }
}

/// Two difficulty classes, two models, short horizon.
pub fn small_config(horizon: usize, levels: usize) -> SyntheticEnvConfig {
    SyntheticEnvConfig {
        states: vec![state(0.0, [0.85, 0.97], 0.8), state(1.0, [0.35, 0.9], 0.8)],
        step_costs: vec![1.0, 4.0],
        step_tokens: vec![],
        horizon,
        verifier_accuracy: 0.9,
        emission_levels: levels,
        seed: 11,
        t_max: horizon.max(1),
    }
}

/// A policy head with all parameters scaled by `gain`, so that escalation
/// probabilities spread over (0, 1) instead of sitting near one half.
pub fn spread_head(seed: u64, gain: f64) -> steproute::nn::PolicyHead {
    let mut head = steproute::nn::PolicyHead::new(2, &mut rng(seed));
    head.mlp.params.iter_mut().for_each(|p| *p *= gain);
    head
}
