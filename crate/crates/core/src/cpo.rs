//! Trust-region constrained policy update.
//!
//! The update minimizes the expected routing cost subject to the coverage
//! constraint `J_C ≥ 1 − α` within a KL radius δ. Both surrogates are
//! linearized around the current policy; the quadratic trust region uses the
//! Fisher matrix of the smooth softmax policy π, while the line search checks
//! the KL of the threshold-filtered distributions S as well.

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::calibrate::coverage_bit;
use crate::error::{Error, Result};
use crate::features::Observation;
use crate::nn::{dot, kl, PolicyHead, DEFAULT_FISHER_DAMPING};
use crate::policy::{filtered_of, ThresholdPolicy};
use crate::rollout::EpisodeLog;
use crate::vtrace::VTraceConfig;

/// How the coverage-constraint gradient is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintGradient {
    /// Score function weighted by coverage advantages of the sampled actions.
    Advantage,
    /// Score function of the clipped importance-weighted estimator
    /// `Π_t ρ_t 𝟙{R_π = 1}`, with the weights held fixed.
    ImportanceWeighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpoConfig {
    pub delta: f64,
    pub alpha: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
    pub damping: f64,
    pub constraint_gradient: ConstraintGradient,
}

impl Default for CpoConfig {
    fn default() -> Self {
        CpoConfig {
            delta: 0.01,
            alpha: 0.02,
            cg_iters: 10,
            cg_tol: 1e-10,
            backtrack_coeff: 0.8,
            max_backtracks: 15,
            damping: DEFAULT_FISHER_DAMPING,
            constraint_gradient: ConstraintGradient::Advantage,
        }
    }
}

impl CpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("cpo.delta must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("cpo.alpha must lie in (0, 1)");
        }
        if self.cg_iters == 0 || !(self.cg_tol > 0.0) {
            return bad("cpo.cg_iters and cpo.cg_tol must be positive");
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return bad("cpo.backtrack_coeff must lie in (0, 1)");
        }
        if !(self.damping >= 0.0) {
            return bad("cpo.damping must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive definite `A` given as a
/// matrix-vector product. Stops when `‖A x − b‖ ≤ tol ‖b‖`.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize, tol: f64) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let goal = tol * rs.sqrt();
    let mut iterations = 0;
    while rs.sqrt() > goal && iterations < iters {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Numeric(format!("conjugate gradient curvature {pap}")));
        }
        let step = rs / pap;
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() {
            return Err(Error::Numeric("non-finite conjugate gradient residual".into()));
        }
        for i in 0..p.len() {
            p[i] = r[i] + rs_new / rs * p[i];
        }
        rs = rs_new;
        iterations += 1;
    }
    Ok(CgResult { converged: rs.sqrt() <= goal, x, iterations, residual_norm: rs.sqrt() })
}

/// Estimated coverage surrogate J̄_C = ℙ̂(R_Π = 1) + ℙ̂(R_M = 0), capped at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEstimate {
    pub j_bar: f64,
    pub p_routed_correct: f64,
    pub p_large_wrong: f64,
    /// Plain empirical coverage of the batch under the sampling policy.
    pub empirical_coverage: f64,
}

/// Clipped per-step ratios `min(ρ̄, S(a|o)/π_b(a|o))` of one episode.
fn filtered_rhos(ep: &EpisodeLog, tp: &ThresholdPolicy, rho_bar: f64) -> Result<Vec<f64>> {
    ep.steps
        .iter()
        .map(|s| {
            if !(s.behavior_prob > 0.0) {
                return Err(Error::Numeric(format!(
                    "behavior probability {} cannot be importance-weighted",
                    s.behavior_prob
                )));
            }
            Ok((tp.filtered_distribution(&s.observation).prob(s.action) / s.behavior_prob).min(rho_bar))
        })
        .collect()
}

pub fn estimate_constraint(
    episodes: &[EpisodeLog],
    tp: &ThresholdPolicy,
    p_large_wrong: f64,
    cfg: &VTraceConfig,
) -> Result<ConstraintEstimate> {
    if !(0.0..=1.0).contains(&p_large_wrong) {
        return Err(Error::Validation(format!("p_large_wrong {p_large_wrong} outside [0, 1]")));
    }
    if episodes.is_empty() {
        return Err(Error::Validation("constraint estimate needs at least one episode".into()));
    }
    let n = episodes.len() as f64;
    let mut p_routed = 0.0;
    let mut covered = 0usize;
    for ep in episodes {
        if ep.terminal.routed_correct {
            p_routed += filtered_rhos(ep, tp, cfg.rho_bar)?.iter().product::<f64>();
        }
        covered += usize::from(coverage_bit(ep.coverage_event(), false));
    }
    let p_routed_correct = p_routed / n;
    Ok(ConstraintEstimate {
        j_bar: (p_routed_correct + p_large_wrong).min(1.0),
        p_routed_correct,
        p_large_wrong,
        empirical_coverage: covered as f64 / n,
    })
}

struct Sample {
    obs: Observation,
    action: Action,
    old_prob: f64,
    cost_adv: f64,
    cov_adv: f64,
    episode: usize,
}

/// The linear surrogates of one update batch around the pre-update policy.
///
/// With `r_t(θ) = π_θ(a_t|o_t) / π_old(a_t|o_t)` and N episodes:
/// - objective `L(θ) = (1/N) Σ_i Σ_t r_t(θ) Â^cost_t`;
/// - constraint `L_C(θ) = (1/N) Σ_i Σ_t r_t(θ) Â^cov_t` (advantage form) or
///   `(1/N) Σ_i w_i 𝟙{R_i} Π_t r_t(θ)` (importance-weighted form, with
///   `w_i = Π_t ρ_t` fixed).
pub struct SurrogateBatch {
    samples: Vec<Sample>,
    /// Per episode: `w_i 𝟙{R_i}` for the importance-weighted form.
    episode_weights: Vec<f64>,
    n_episodes: usize,
    mode: ConstraintGradient,
}

impl SurrogateBatch {
    pub fn new(
        old: &PolicyHead,
        episodes: &[EpisodeLog],
        cost_adv: &[Vec<f64>],
        cov_adv: &[Vec<f64>],
        episode_weights: Vec<f64>,
        mode: ConstraintGradient,
    ) -> Result<Self> {
        if cost_adv.len() != episodes.len() || cov_adv.len() != episodes.len() || episode_weights.len() != episodes.len() {
            return Err(Error::Dimension { expected: episodes.len(), actual: cost_adv.len().min(cov_adv.len()) });
        }
        let mut samples = Vec::new();
        for (i, ep) in episodes.iter().enumerate() {
            if cost_adv[i].len() != ep.len() || cov_adv[i].len() != ep.len() {
                return Err(Error::Dimension { expected: ep.len(), actual: cost_adv[i].len() });
            }
            for (t, s) in ep.steps.iter().enumerate() {
                let old_prob = old.try_probs(&s.observation)?.prob(s.action);
                samples.push(Sample {
                    obs: s.observation,
                    action: s.action,
                    old_prob,
                    cost_adv: cost_adv[i][t],
                    cov_adv: cov_adv[i][t],
                    episode: i,
                });
            }
        }
        Ok(SurrogateBatch { samples, episode_weights, n_episodes: episodes.len().max(1), mode })
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.samples.iter().map(|s| s.obs).collect()
    }

    fn ratio(head: &PolicyHead, s: &Sample) -> f64 {
        head.probs(&s.obs).prob(s.action) / s.old_prob
    }

    pub fn objective(&self, head: &PolicyHead) -> f64 {
        self.samples.iter().map(|s| Self::ratio(head, s) * s.cost_adv).sum::<f64>() / self.n_episodes as f64
    }

    pub fn objective_grad(&self, head: &PolicyHead) -> Vec<f64> {
        let mut g = vec![0.0; head.mlp.num_params()];
        for s in &self.samples {
            let scale = Self::ratio(head, s) * s.cost_adv / self.n_episodes as f64;
            head.accumulate_grad_log_prob(&s.obs, s.action, scale, &mut g);
        }
        g
    }

    fn episode_ratio_products(&self, head: &PolicyHead) -> Vec<f64> {
        let mut prod = vec![1.0; self.episode_weights.len()];
        for s in &self.samples {
            prod[s.episode] *= Self::ratio(head, s);
        }
        prod
    }

    pub fn constraint(&self, head: &PolicyHead) -> f64 {
        let n = self.n_episodes as f64;
        match self.mode {
            ConstraintGradient::Advantage => {
                self.samples.iter().map(|s| Self::ratio(head, s) * s.cov_adv).sum::<f64>() / n
            }
            ConstraintGradient::ImportanceWeighted => {
                let prod = self.episode_ratio_products(head);
                self.episode_weights.iter().zip(&prod).map(|(w, p)| w * p).sum::<f64>() / n
            }
        }
    }

    pub fn constraint_grad(&self, head: &PolicyHead) -> Vec<f64> {
        let n = self.n_episodes as f64;
        let mut g = vec![0.0; head.mlp.num_params()];
        match self.mode {
            ConstraintGradient::Advantage => {
                for s in &self.samples {
                    let scale = Self::ratio(head, s) * s.cov_adv / n;
                    head.accumulate_grad_log_prob(&s.obs, s.action, scale, &mut g);
                }
            }
            ConstraintGradient::ImportanceWeighted => {
                let prod = self.episode_ratio_products(head);
                for s in &self.samples {
                    let scale = self.episode_weights[s.episode] * prod[s.episode] / n;
                    if scale != 0.0 {
                        head.accumulate_grad_log_prob(&s.obs, s.action, scale, &mut g);
                    }
                }
            }
        }
        g
    }
}

/// Which regime of the constrained step applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualCase {
    /// Zero objective and constraint gradients.
    NoOp,
    /// Constraint inactive inside the trust region: natural-gradient step.
    Objective,
    /// Constraint binding: combination of both directions.
    Binding,
    /// Infeasible within the trust region: step along the constraint only.
    Recovery,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualSolution {
    pub step: Vec<f64>,
    pub case: DualCase,
    pub lambda: f64,
    pub nu: f64,
}

const TINY: f64 = 1e-12;

/// Solves `min gᵀx  s.t.  c + bᵀx ≤ 0,  ½ xᵀHx ≤ δ` through its
/// two-variable dual, given `H⁻¹g` and `H⁻¹b`.
pub fn constrained_step(g: &[f64], b: &[f64], hinv_g: &[f64], hinv_b: &[f64], c: f64, delta: f64) -> DualSolution {
    // dual of the ascent problem max (−g)ᵀx, with r taken on the descent gradient
    let q = dot(g, hinv_g);
    let r = dot(g, hinv_b);
    let s = dot(b, hinv_b);
    let objective_only = |q: f64| {
        if q <= TINY {
            return DualSolution { step: vec![0.0; g.len()], case: DualCase::NoOp, lambda: 0.0, nu: 0.0 };
        }
        let lambda = (q / (2.0 * delta)).sqrt();
        DualSolution { step: hinv_g.iter().map(|v| -v / lambda).collect(), case: DualCase::Objective, lambda, nu: 0.0 }
    };
    if s <= TINY {
        return objective_only(q);
    }
    let slack = 2.0 * delta - c * c / s;
    if c < 0.0 && slack < 0.0 {
        return objective_only(q);
    }
    if c > 0.0 && slack < 0.0 {
        let nu = (2.0 * delta / s).sqrt();
        return DualSolution { step: hinv_b.iter().map(|v| -nu * v).collect(), case: DualCase::Recovery, lambda: 0.0, nu };
    }
    let a = (q - r * r / s).max(0.0);
    let f_a = |l: f64| -0.5 * (a / l + slack * l) - r * c / s;
    let f_b = |l: f64| -0.5 * (q / l + 2.0 * delta * l);
    // Λ_a = {λ ≥ 0 : λc − r > 0}, Λ_b = {λ ≥ 0 : λc − r ≤ 0}
    let (range_a, range_b) = if c > 0.0 {
        let cut = (r / c).max(0.0);
        ((cut, f64::INFINITY), (0.0, r / c))
    } else if c < 0.0 {
        ((0.0, r / c), ((r / c).max(0.0), f64::INFINITY))
    } else if r < 0.0 {
        ((0.0, f64::INFINITY), (1.0, 0.0))
    } else {
        ((1.0, 0.0), (0.0, f64::INFINITY))
    };
    let project = |x: f64, (lo, hi): (f64, f64)| (lo <= hi).then(|| x.clamp(lo, hi));
    let lam_a = if slack > 0.0 { (a / slack).sqrt() } else { f64::INFINITY };
    let lam_b = (q / (2.0 * delta)).sqrt();
    let cand_a = project(lam_a, range_a).filter(|l| *l > TINY && l.is_finite()).map(|l| (l, f_a(l)));
    let cand_b = project(lam_b, range_b).filter(|l| *l > TINY && l.is_finite()).map(|l| (l, f_b(l)));
    let lambda = match (cand_a, cand_b) {
        (Some((la, va)), Some((lb, vb))) => {
            if va >= vb {
                la
            } else {
                lb
            }
        }
        (Some((la, _)), None) => la,
        (None, Some((lb, _))) => lb,
        (None, None) => return objective_only(q),
    };
    let nu = ((lambda * c - r) / s).max(0.0);
    let step = hinv_g.iter().zip(hinv_b).map(|(hg, hb)| (-hg - nu * hb) / lambda).collect();
    let case = if nu > 0.0 { DualCase::Binding } else { DualCase::Objective };
    DualSolution { step, case, lambda, nu }
}

/// Per-update summary, one row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpoReport {
    pub case: DualCase,
    pub accepted: bool,
    pub backtracks: usize,
    /// Fraction of the full step taken (0 when rejected).
    pub step_fraction: f64,
    /// Mean KL(π_old ‖ π_new) over multi-action observations.
    pub kl_pi: f64,
    /// Mean KL(S_new ‖ S_old) over the same observations.
    pub kl_s: f64,
    pub objective_change: f64,
    pub constraint_before: f64,
    pub constraint_after: f64,
    pub lambda: f64,
    pub nu: f64,
    pub cg_iterations: usize,
}

/// Mean KL(π_old ‖ π_new) and KL(S_new ‖ S_old) at a fixed threshold.
pub fn batch_kls(old: &PolicyHead, new: &PolicyHead, batch: &[Observation], threshold: f64) -> (f64, f64) {
    let (mut kp, mut ks, mut n) = (0.0, 0.0, 0usize);
    for o in batch {
        let p_old = old.probs(o);
        if p_old.actions.len() < 2 {
            continue;
        }
        let p_new = new.probs(o);
        kp += kl(&p_old.probs, &p_new.probs);
        ks += kl(&filtered_of(&p_new, threshold).probs, &filtered_of(&p_old, threshold).probs);
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (kp / n as f64, ks / n as f64)
    }
}

/// One constrained trust-region update of `head` at routing threshold
/// `threshold` (held fixed).
pub fn cpo_update(
    head: &PolicyHead,
    batch: &SurrogateBatch,
    estimate: &ConstraintEstimate,
    cfg: &CpoConfig,
    threshold: f64,
) -> Result<(PolicyHead, CpoReport)> {
    let g = batch.objective_grad(head);
    let b_cov = batch.constraint_grad(head);
    if g.iter().chain(&b_cov).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite policy gradient".into()));
    }
    // constraint in ≤ 0 form: C(θ) = (1 − α) − J_C(θ)
    let c = (1.0 - cfg.alpha) - estimate.j_bar;
    let b: Vec<f64> = b_cov.iter().map(|v| -v).collect();
    let obs = batch.observations();
    let fvp = |v: &[f64]| head.fisher_vector_product(&obs, v, cfg.damping);
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    let (hinv_g, it_g) = if zero(&g) {
        (vec![0.0; g.len()], 0)
    } else {
        let r = conjugate_gradient(fvp, &g, cfg.cg_iters, cfg.cg_tol)?;
        (r.x, r.iterations)
    };
    let (hinv_b, it_b) = if zero(&b) {
        (vec![0.0; b.len()], 0)
    } else {
        let r = conjugate_gradient(fvp, &b, cfg.cg_iters, cfg.cg_tol)?;
        (r.x, r.iterations)
    };
    let sol = constrained_step(&g, &b, &hinv_g, &hinv_b, c, cfg.delta);
    let mut report = CpoReport {
        case: sol.case,
        accepted: false,
        backtracks: 0,
        step_fraction: 0.0,
        kl_pi: 0.0,
        kl_s: 0.0,
        objective_change: 0.0,
        constraint_before: c,
        constraint_after: c,
        lambda: sol.lambda,
        nu: sol.nu,
        cg_iterations: it_g + it_b,
    };
    if sol.case == DualCase::NoOp {
        return Ok((head.clone(), report));
    }
    if sol.step.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite policy step".into()));
    }
    let obj_old = batch.objective(head);
    let con_old = batch.constraint(head);
    let mut frac = 1.0;
    for j in 0..=cfg.max_backtracks {
        let candidate = head.stepped(&sol.step, frac);
        if candidate.mlp.is_finite() {
            let (kl_pi, kl_s) = batch_kls(head, &candidate, &obs, threshold);
            let d_obj = batch.objective(&candidate) - obj_old;
            let c_new = c - (batch.constraint(&candidate) - con_old);
            let objective_ok = sol.case == DualCase::Recovery || d_obj <= 0.0;
            let constraint_ok = sol.case == DualCase::Objective || c_new <= c.max(0.0);
            if kl_pi <= cfg.delta && kl_s <= cfg.delta && objective_ok && constraint_ok {
                report.accepted = true;
                report.backtracks = j;
                report.step_fraction = frac;
                report.kl_pi = kl_pi;
                report.kl_s = kl_s;
                report.objective_change = d_obj;
                report.constraint_after = c_new;
                return Ok((candidate, report));
            }
        }
        frac *= cfg.backtrack_coeff;
    }
    report.backtracks = cfg.max_backtracks;
    Ok((head.clone(), report))
}

/// `w_i 𝟙{R_i}` per episode for [`ConstraintGradient::ImportanceWeighted`].
pub fn importance_weights(episodes: &[EpisodeLog], tp: &ThresholdPolicy, cfg: &VTraceConfig) -> Result<Vec<f64>> {
    episodes
        .iter()
        .map(|ep| {
            Ok(if ep.terminal.routed_correct {
                filtered_rhos(ep, tp, cfg.rho_bar)?.iter().product()
            } else {
                0.0
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_identity_one_iteration() {
        let b = vec![1.0, -2.0, 3.5];
        let r = conjugate_gradient(|v| Ok(v.to_vec()), &b, 10, 1e-12).unwrap();
        assert_eq!(r.x, b);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn cg_zero_rhs() {
        let r = conjugate_gradient(|v| Ok(v.iter().map(|x| 2.0 * x).collect()), &[0.0, 0.0], 10, 1e-12).unwrap();
        assert_eq!(r.x, vec![0.0, 0.0]);
        assert!(r.converged);
    }

    #[test]
    fn objective_case_scales_to_radius() {
        // H = I, g = (3, 4): step = −g √(2δ)/|g|
        let g = [3.0, 4.0];
        let sol = constrained_step(&g, &[0.0, 0.0], &g, &[0.0, 0.0], -1.0, 0.02);
        assert_eq!(sol.case, DualCase::Objective);
        assert!((sol.step[0] + 0.6 * 0.2).abs() < 1e-12);
        assert!((sol.step[1] + 0.8 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn recovery_case() {
        let b = [0.0, 1.0];
        let sol = constrained_step(&[1.0, 0.0], &b, &[1.0, 0.0], &b, 1.0, 0.01);
        assert_eq!(sol.case, DualCase::Recovery);
        assert!((sol.step[1] + (0.02f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_defaults_validate() {
        assert!(CpoConfig::default().validate().is_ok());
        assert!(CpoConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
    }
}
