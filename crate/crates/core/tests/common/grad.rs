//! Finite-difference oracles for every analytic gradient in training.

use super::*;
use steproute::action::Action;
use steproute::cpo::{ConstraintGradient, SurrogateBatch};
use steproute::env::SyntheticEnv;
use steproute::features::{Observation, FEATURE_DIM};
use steproute::nn::{kl, CriticHead, PolicyHead};
use steproute::rollout::{run_episode, EpisodeLog};
use steproute::vtrace::{critic_loss, critic_loss_grad};

pub const H: f64 = 1e-5;

pub fn with_params(head: &PolicyHead, p: &[f64]) -> PolicyHead {
    let mut h = head.clone();
    h.mlp.params = p.to_vec();
    h
}

/// Worst relative error of ∇ log π(a|o) along random directions.
pub fn log_prob_worst(instances: usize) -> f64 {
    let mut rng = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let k = 2 + i % 2;
        let head = PolicyHead::new(k, &mut rng);
        let mut obs = random_obs(&mut rng, k);
        obs.model_index = rng.random_range(0..k - 1);
        let actions = Action::available(obs.model_index, k);
        let a = actions[rng.random_range(0..actions.len())];
        let g = head.grad_log_prob(&obs, a);
        let v = random_vec(&mut rng, g.len());
        let fd = directional_fd(|p| with_params(&head, p).probs(&obs).prob(a).ln(), &head.mlp.params, &v, H);
        worst = worst.max(rel_err(dot(&g, &v), fd));
    }
    worst
}

pub fn episodes(seed: u64, n: usize) -> (PolicyHead, Vec<EpisodeLog>) {
    let mut rng = rng(seed);
    let head = PolicyHead::new(2, &mut rng);
    let mut env = SyntheticEnv::new(small_config(4, 5)).unwrap();
    let eps = (0..n).map(|i| run_episode(&mut env, &head, seed * 1000 + i as u64, &mut rng).unwrap()).collect();
    (head, eps)
}

/// Worst relative error of the critic's squared-error gradient.
pub fn critic_worst(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (_, eps) = episodes(100 + i, 3);
        let mut rng = rng(200 + i);
        let critic = CriticHead::new(&mut rng);
        let targets: Vec<Vec<f64>> = eps.iter().map(|e| random_vec(&mut rng, e.len())).collect();
        let g = critic_loss_grad(&critic, &eps, &targets);
        let v = random_vec(&mut rng, g.len());
        let fd = directional_fd(
            |p| {
                let mut c = critic.clone();
                c.mlp.params = p.to_vec();
                critic_loss(&c, &eps, &targets)
            },
            &critic.mlp.params,
            &v,
            H,
        );
        worst = worst.max(rel_err(dot(&g, &v), fd));
    }
    worst
}

/// (constraint, objective) relative errors of one surrogate batch.
pub fn surrogate_check(mode: ConstraintGradient, seed: u64) -> (f64, f64) {
    let (old, eps) = episodes(seed, 4);
    let mut rng = rng(seed + 7);
    let cost_adv: Vec<Vec<f64>> = eps.iter().map(|e| random_vec(&mut rng, e.len())).collect();
    let cov_adv: Vec<Vec<f64>> = eps.iter().map(|e| random_vec(&mut rng, e.len())).collect();
    let weights: Vec<f64> = eps.iter().map(|_| rng.random_range(0.0..2.0)).collect();
    let batch = SurrogateBatch::new(&old, &eps, &cost_adv, &cov_adv, weights, mode).unwrap();
    // evaluate away from the expansion point so the ratios differ from 1
    let v0 = random_vec(&mut rng, old.mlp.num_params());
    let head = old.stepped(&v0, 0.05);
    let v = random_vec(&mut rng, old.mlp.num_params());
    let gc = batch.constraint_grad(&head);
    let fdc = directional_fd(|p| batch.constraint(&with_params(&head, p)), &head.mlp.params, &v, H);
    let go = batch.objective_grad(&head);
    let fdo = directional_fd(|p| batch.objective(&with_params(&head, p)), &head.mlp.params, &v, H);
    (rel_err(dot(&gc, &v), fdc), rel_err(dot(&go, &v), fdo))
}

pub fn surrogate_worst(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        for mode in [ConstraintGradient::Advantage, ConstraintGradient::ImportanceWeighted] {
            let (c, o) = surrogate_check(mode, 300 + i);
            worst = worst.max(c).max(o);
        }
    }
    worst
}

/// Mean KL(π_old ‖ π_θ) over a batch.
pub fn mean_kl(old: &PolicyHead, p: &[f64], batch: &[Observation]) -> f64 {
    let new = with_params(old, p);
    batch.iter().map(|o| kl(&old.probs(o).probs, &new.probs(o).probs)).sum::<f64>() / batch.len() as f64
}

/// Worst relative error of the Fisher-vector product against the Hessian
/// of the mean KL by mixed central differences.
pub fn fvp_worst() -> f64 {
    let mut rng = rng(5);
    let old = PolicyHead::with_sizes(&[FEATURE_DIM, 4, 3], &mut rng);
    // scale up so the policy is far from uniform
    let old = with_params(&old, &old.mlp.params.iter().map(|p| p * 30.0).collect::<Vec<_>>());
    let batch: Vec<_> = (0..8).map(|_| random_obs(&mut rng, 3)).collect();
    let n = old.mlp.num_params();
    let theta = old.mlp.params.clone();
    let h = 1e-4;
    let f = |d: &[f64]| {
        let p: Vec<f64> = theta.iter().zip(d).map(|(a, b)| a + b).collect();
        mean_kl(&old, &p, &batch)
    };
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut d = vec![0.0; n];
            let mut val = 0.0;
            for (si, sj, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                d.iter_mut().for_each(|x| *x = 0.0);
                d[i] += si * h;
                d[j] += sj * h;
                val += w * f(&d);
            }
            hess[i][j] = val / (4.0 * h * h);
            hess[j][i] = hess[i][j];
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let v = random_vec(&mut rng, n);
        let fvp = old.fisher_vector_product(&batch, &v, 0.0).unwrap();
        let oracle = matvec(&hess, &v);
        let err: f64 = fvp.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = oracle.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
    }
    worst
}
