//! Explicit-sum V-trace and an enumerable finite-horizon MDP.

use super::rng;
use rand::Rng;
use steproute::vtrace::VTraceConfig;

/// v_s = V(x_s) + Σ_{t≥s} γ^{t−s} (Π_{i=s}^{t−1} c_i) ρ_t (r_t + γV(x_{t+1}) − V(x_t)).
pub fn explicit_targets(r: &[f64], v: &[f64], ratio: &[f64], cfg: &VTraceConfig) -> Vec<f64> {
    let n = r.len();
    let val = |t: usize| if t < n { v[t] } else { 0.0 };
    (0..n)
        .map(|s| {
            let mut total = v[s];
            let mut weight = 1.0;
            for t in s..n {
                let rho = ratio[t].min(cfg.rho_bar);
                total += weight * rho * (r[t] + cfg.discount * val(t + 1) - v[t]);
                weight *= cfg.discount * ratio[t].min(cfg.c_bar);
            }
            total
        })
        .collect()
}

pub const S: usize = 3;
pub const A: usize = 2;
pub const T: usize = 3;

/// A finite-horizon MDP with time-dependent policies.
pub struct Mdp {
    pub init: [f64; S],
    pub reward: [[f64; A]; S],
    pub trans: [[[f64; S]; A]; S],
    pub behavior: [[[f64; A]; S]; T],
    pub target: [[[f64; A]; S]; T],
}

pub fn simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_mdp(seed: u64) -> Mdp {
    let mut rng = rng(seed);
    let mut m = Mdp {
        init: [0.0; S],
        reward: [[0.0; A]; S],
        trans: [[[0.0; S]; A]; S],
        behavior: [[[0.0; A]; S]; T],
        target: [[[0.0; A]; S]; T],
    };
    m.init.copy_from_slice(&simplex(&mut rng, S));
    for x in 0..S {
        for a in 0..A {
            m.reward[x][a] = rng.random_range(-1.0..2.0);
            m.trans[x][a].copy_from_slice(&simplex(&mut rng, S));
        }
        for t in 0..T {
            m.behavior[t][x].copy_from_slice(&simplex(&mut rng, A));
            m.target[t][x].copy_from_slice(&simplex(&mut rng, A));
        }
    }
    m
}

/// π_ρ̄(a|x) ∝ min(ρ̄ μ(a|x), π(a|x)).
pub fn truncated_target(m: &Mdp, rho_bar: f64) -> [[[f64; A]; S]; T] {
    let mut out = [[[0.0; A]; S]; T];
    for t in 0..T {
        for x in 0..S {
            let w: Vec<f64> = (0..A).map(|a| (rho_bar * m.behavior[t][x][a]).min(m.target[t][x][a])).collect();
            let z: f64 = w.iter().sum();
            for a in 0..A {
                out[t][x][a] = w[a] / z;
            }
        }
    }
    out
}

/// Backward induction: (V_t(x), Q_t(x, a)) of `policy`, undiscounted.
pub fn dp(m: &Mdp, policy: &[[[f64; A]; S]; T]) -> (Vec<[f64; S]>, Vec<[[f64; A]; S]>) {
    let mut v = vec![[0.0; S]; T + 1];
    let mut q = vec![[[0.0; A]; S]; T];
    for t in (0..T).rev() {
        for x in 0..S {
            for a in 0..A {
                q[t][x][a] = m.reward[x][a] + (0..S).map(|y| m.trans[x][a][y] * v[t + 1][y]).sum::<f64>();
            }
            v[t][x] = (0..A).map(|a| policy[t][x][a] * q[t][x][a]).sum();
        }
    }
    (v, q)
}

/// Every trajectory with its behavior probability.
pub fn trajectories(m: &Mdp) -> Vec<(f64, Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    fn rec(m: &Mdp, t: usize, p: f64, xs: &mut Vec<usize>, acts: &mut Vec<usize>, out: &mut Vec<(f64, Vec<usize>, Vec<usize>)>) {
        if t == T {
            out.push((p, xs.clone(), acts.clone()));
            return;
        }
        let x = xs[t];
        for a in 0..A {
            acts.push(a);
            if t + 1 == T {
                rec(m, t + 1, p * m.behavior[t][x][a], xs, acts, out);
            } else {
                for y in 0..S {
                    xs.push(y);
                    rec(m, t + 1, p * m.behavior[t][x][a] * m.trans[x][a][y], xs, acts, out);
                    xs.pop();
                }
            }
            acts.pop();
        }
    }
    for x0 in 0..S {
        rec(m, 0, m.init[x0], &mut vec![x0], &mut Vec::new(), &mut out);
    }
    out
}
