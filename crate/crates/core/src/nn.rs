//! Small tanh MLPs with hand-written reverse-mode gradients, forward-mode
//! Jacobian-vector products, and the Fisher-vector product of the policy.
//!
//! Parameters live in one flat vector, laid out layer by layer as a
//! row-major `out x in` weight matrix followed by the `out` biases. The flat
//! layout is what the conjugate-gradient solver and line search operate on.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::features::{Observation, FEATURE_DIM};

pub const HIDDEN: usize = 64;

/// Damping added to the Fisher-vector product.
pub const DEFAULT_FISHER_DAMPING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Post-activation values of every layer for one input; `acts[0]` is the
/// input and the last entry is the (linear) output.
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has an output layer")
    }
}

fn count_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        MlpParams {
            sizes: sizes.to_vec(),
            activation: Activation::Tanh,
            params: vec![0.0; count_params(sizes)],
        }
    }

    /// Orthogonal initialization: gain 1 on hidden layers, `final_gain` on
    /// the output layer, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], final_gain: f64, rng: &mut R) -> Self {
        let mut mlp = MlpParams::zeros(sizes);
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if l + 1 == n_layers { final_gain } else { 1.0 };
            let q = orthogonal(fan_out, fan_in, rng);
            for (dst, src) in mlp.params[off..off + fan_in * fan_out].iter_mut().zip(q) {
                *dst = gain * src;
            }
            off += fan_in * fan_out + fan_out;
        }
        mlp
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.params.len() != count_params(&self.sizes) {
            return Err(Error::Dimension {
                expected: count_params(&self.sizes),
                actual: self.params.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// (weight offset, fan_in, fan_out) per layer; biases follow the weights.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0usize, |off, w| {
            let here = *off;
            *off += w[0] * w[1] + w[1];
            Some((here, w[0], w[1]))
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_tape(x).acts.pop().unwrap()
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let a = acts.last().unwrap();
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = (0..fan_out)
                .map(|i| b[i] + dot(&w[i * fan_in..(i + 1) * fan_in], a))
                .collect();
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Tape { acts }
    }

    /// Accumulates `J^T grad_out` into `grad`, where `J` is the Jacobian of
    /// the outputs with respect to the flat parameters.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = grad_out.to_vec();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let a_in = &tape.acts[l];
            let (gw, rest) = grad[off..].split_at_mut(fan_in * fan_out);
            for i in 0..fan_out {
                let d = delta[i];
                if d != 0.0 {
                    for (g, a) in gw[i * fan_in..(i + 1) * fan_in].iter_mut().zip(a_in) {
                        *g += d * a;
                    }
                }
                rest[i] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for i in 0..fan_out {
                    let d = delta[i];
                    if d != 0.0 {
                        for (p, wij) in prev.iter_mut().zip(&w[i * fan_in..(i + 1) * fan_in]) {
                            *p += d * wij;
                        }
                    }
                }
                for (p, a) in prev.iter_mut().zip(a_in) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    /// Directional derivative of the outputs along parameter direction `v`.
    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut a = x.to_vec();
        let mut da = vec![0.0; x.len()];
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let dw = &v[off..off + fan_in * fan_out];
            let db = &v[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = vec![0.0; fan_out];
            let mut dz = vec![0.0; fan_out];
            for i in 0..fan_out {
                let row = i * fan_in..(i + 1) * fan_in;
                z[i] = b[i] + dot(&w[row.clone()], &a);
                dz[i] = db[i] + dot(&dw[row.clone()], &a) + dot(&w[row], &da);
            }
            if l + 1 < n_layers {
                for i in 0..fan_out {
                    z[i] = z[i].tanh();
                    dz[i] *= 1.0 - z[i] * z[i];
                }
            }
            a = z;
            da = dz;
        }
        da
    }
}

/// Matrix with orthonormal rows (if rows <= cols) or columns, from
/// Gram-Schmidt on a Gaussian draw. Row-major.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (n, m, transpose) = if rows <= cols { (rows, cols, false) } else { (cols, rows, true) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for u in &basis {
            let p = dot(u, &v);
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= p * ui);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|vi| *vi /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (i, row) in basis.iter().enumerate() {
        for (j, val) in row.iter().enumerate() {
            if transpose {
                out[j * cols + i] = *val;
            } else {
                out[i * cols + j] = *val;
            }
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probabilities over the actions available at an observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDist {
    pub actions: Vec<Action>,
    pub probs: Vec<f64>,
}

impl ActionDist {
    pub fn prob(&self, a: Action) -> f64 {
        self.actions
            .iter()
            .position(|x| *x == a)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn argmax(&self) -> Action {
        // first maximum wins, i.e. ties go to the cheaper action
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        self.actions[best]
    }
}

/// Masked softmax over `logits[slot]` for the available actions.
fn masked_softmax(logits: &[f64], actions: &[Action]) -> Vec<f64> {
    let z: Vec<f64> = actions.iter().map(|a| logits[a.slot()]).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// The base routing policy: an MLP with one logit per model slot (slot 0 is
/// continue, slot `k` escalates to model `k`), softmaxed over the actions
/// available at the current model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHead {
    pub mlp: MlpParams,
}

impl PolicyHead {
    /// `[F, 64, 64, K]` with orthogonal init and a 0.01-scaled output layer.
    pub fn new<R: Rng + ?Sized>(num_models: usize, rng: &mut R) -> Self {
        Self::with_sizes(&[FEATURE_DIM, HIDDEN, HIDDEN, num_models], rng)
    }

    pub fn with_sizes<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        PolicyHead { mlp: MlpParams::init(sizes, 0.01, rng) }
    }

    pub fn zeros(num_models: usize) -> Self {
        PolicyHead { mlp: MlpParams::zeros(&[FEATURE_DIM, HIDDEN, HIDDEN, num_models]) }
    }

    pub fn num_models(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn logits(&self, obs: &Observation) -> Vec<f64> {
        self.mlp.forward(&obs.features())
    }

    /// Action distribution π(·|obs).
    pub fn probs(&self, obs: &Observation) -> ActionDist {
        let actions = Action::available(obs.model_index, self.num_models());
        let probs = masked_softmax(&self.logits(obs), &actions);
        ActionDist { actions, probs }
    }

    /// Like [`probs`](Self::probs) but fails on non-finite outputs.
    pub fn try_probs(&self, obs: &Observation) -> Result<ActionDist> {
        let logits = self.logits(obs);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("non-finite policy logit".into()));
        }
        let actions = Action::available(obs.model_index, self.num_models());
        let probs = masked_softmax(&logits, &actions);
        Ok(ActionDist { actions, probs })
    }

    /// Exact gradient of log π(action|obs) with respect to the flat parameters.
    pub fn grad_log_prob(&self, obs: &Observation, action: Action) -> Vec<f64> {
        let mut grad = vec![0.0; self.mlp.num_params()];
        self.accumulate_grad_log_prob(obs, action, 1.0, &mut grad);
        grad
    }

    /// `grad += scale * ∇ log π(action|obs)`.
    pub fn accumulate_grad_log_prob(&self, obs: &Observation, action: Action, scale: f64, grad: &mut [f64]) {
        let tape = self.mlp.forward_tape(&obs.features());
        let actions = Action::available(obs.model_index, self.num_models());
        if actions.len() < 2 {
            return;
        }
        let p = masked_softmax(tape.output(), &actions);
        let mut g_out = vec![0.0; self.num_models()];
        for (a, pa) in actions.iter().zip(&p) {
            g_out[a.slot()] = scale * (if *a == action { 1.0 } else { 0.0 } - pa);
        }
        self.mlp.backward(&tape, &g_out, grad);
    }

    /// `(1/N) Σ_i J_i^T (diag(p_i) - p_i p_i^T) J_i v + damping * v`: the
    /// Hessian of the mean KL(π_old ‖ π_θ) at θ = θ_old (exact for softmax
    /// outputs, where it coincides with the Gauss-Newton form), plus damping.
    pub fn fisher_vector_product(&self, batch: &[Observation], v: &[f64], damping: f64) -> Result<Vec<f64>> {
        if v.len() != self.mlp.num_params() {
            return Err(Error::Dimension { expected: self.mlp.num_params(), actual: v.len() });
        }
        let mut out = vec![0.0; v.len()];
        if !batch.is_empty() {
            for obs in batch {
                let actions = Action::available(obs.model_index, self.num_models());
                if actions.len() < 2 {
                    continue;
                }
                let x = obs.features();
                let tape = self.mlp.forward_tape(&x);
                let p = masked_softmax(tape.output(), &actions);
                let jv = self.mlp.jvp(&x, v);
                let jv_a: Vec<f64> = actions.iter().map(|a| jv[a.slot()]).collect();
                let mean = dot(&p, &jv_a);
                let mut u = vec![0.0; self.num_models()];
                for ((a, pa), ja) in actions.iter().zip(&p).zip(&jv_a) {
                    u[a.slot()] = pa * (ja - mean);
                }
                self.mlp.backward(&tape, &u, &mut out);
            }
            let n = batch.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o += damping * vi;
        }
        Ok(out)
    }

    /// Mean KL(π_self ‖ π_other) over the batch.
    pub fn mean_kl(&self, other: &PolicyHead, batch: &[Observation]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        batch
            .iter()
            .map(|o| kl(&self.probs(o).probs, &other.probs(o).probs))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Returns a copy with parameters `θ + step`.
    pub fn stepped(&self, step: &[f64], scale: f64) -> PolicyHead {
        let mut next = self.clone();
        for (p, s) in next.mlp.params.iter_mut().zip(step) {
            *p += scale * s;
        }
        next
    }
}

/// KL(p ‖ q) for distributions over the same support; infinite when `q`
/// misses mass that `p` has.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(pi, qi)| {
            if *pi <= 0.0 {
                0.0
            } else if *qi <= 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// State-value network with a scalar output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticHead {
    pub mlp: MlpParams,
}

impl CriticHead {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        CriticHead { mlp: MlpParams::init(&[FEATURE_DIM, HIDDEN, HIDDEN, 1], 0.01, rng) }
    }

    pub fn with_sizes<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        CriticHead { mlp: MlpParams::init(sizes, 0.01, rng) }
    }

    pub fn zeros() -> Self {
        CriticHead { mlp: MlpParams::zeros(&[FEATURE_DIM, HIDDEN, HIDDEN, 1]) }
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.mlp.forward(&obs.features())[0]
    }

    /// `grad += scale * ∇ V(obs)`.
    pub fn accumulate_grad(&self, obs: &Observation, scale: f64, grad: &mut [f64]) {
        let tape = self.mlp.forward_tape(&obs.features());
        self.mlp.backward(&tape, &[scale], grad);
    }
}
