//! M-step: weighted maximum likelihood on the E-step particles under a KL
//! trust region to the previous policy.

use super::policy::{DiagGauss, DistGrad, GaussianPolicy, ACT_DIM};
use crate::env::Obs;
use crate::error::{Error, Result};
use crate::nn::Adam;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepConfig {
    pub iters: usize,
    pub lr: f64,
    /// KL bound `ε̃`.
    pub kl_bound: f64,
    pub lr_omega: f64,
    /// Gradient norm below which the policy counts as stationary.
    pub grad_tol: f64,
    /// After the ascent steps the parameter change is halved until the KL
    /// is at most `backtrack · ε̃`. Adam's step size barely depends on `ω`,
    /// so the penalty alone does not hold the trust region early on.
    pub backtrack: f64,
    /// Rollback when the KL exceeds `rollback · ε̃`.
    pub rollback: f64,
}

impl Default for MStepConfig {
    fn default() -> Self {
        MStepConfig {
            iters: 6,
            lr: 5e-4,
            kl_bound: 0.01,
            lr_omega: 1.0,
            grad_tol: 1e-10,
            backtrack: 2.0,
            rollback: 100.0,
        }
    }
}

/// Weighted pre-squash particles for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepBatch {
    pub obs: Vec<Obs>,
    /// `π_n` at each state.
    pub old: Vec<DiagGauss>,
    pub k: usize,
    /// State-major, `obs.len() · k` entries.
    pub particles: Vec<[f64; ACT_DIM]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepOutcome {
    pub objective: f64,
    /// Mean `KL(π_n ‖ π_θ)` after the update.
    pub kl: f64,
    pub rolled_back: bool,
}

/// `(J, mean KL, ∂J/∂dist per state)` with
/// `J = mean_s [Σ_k w log π_θ(u_k|s) - ω KL(π_n(s) ‖ π_θ(s))]`.
fn terms(policy: &GaussianPolicy, b: &MStepBatch, omega: f64) -> (f64, f64, Vec<DistGrad>) {
    let n = b.obs.len() as f64;
    let mut j = 0.0;
    let mut kl = 0.0;
    let mut dgs = Vec::with_capacity(b.obs.len());
    for (s, o) in b.obs.iter().enumerate() {
        let g = policy.dist(o);
        let old = &b.old[s];
        let mut dg = DistGrad::default();
        for k in 0..b.k {
            let (u, w) = (&b.particles[s * b.k + k], b.weights[s * b.k + k]);
            j += w * g.log_prob(u) / n;
            for d in 0..ACT_DIM {
                let var = (2.0 * g.log_std[d]).exp();
                let r = u[d] - g.mean[d];
                dg.mean[d] += w * r / var / n;
                dg.log_std[d] += w * (r * r / var - 1.0) / n;
            }
        }
        let kl_s = old.kl(&g);
        kl += kl_s / n;
        j -= omega * kl_s / n;
        for d in 0..ACT_DIM {
            let var = (2.0 * g.log_std[d]).exp();
            let old_var = (2.0 * old.log_std[d]).exp();
            let dm = g.mean[d] - old.mean[d];
            dg.mean[d] -= omega * (dm / var) / n;
            dg.log_std[d] -= omega * (1.0 - (old_var + dm * dm) / var) / n;
        }
        dgs.push(dg);
    }
    (j, kl, dgs)
}

pub fn objective(policy: &GaussianPolicy, b: &MStepBatch, omega: f64) -> (f64, f64) {
    let (j, kl, _) = terms(policy, b, omega);
    (j, kl)
}

pub fn objective_grad(policy: &GaussianPolicy, b: &MStepBatch, omega: f64) -> (f64, f64, Vec<f64>) {
    let (j, kl, dgs) = terms(policy, b, omega);
    let mut grads = vec![0.0; policy.mlp.params.len()];
    policy.backward(&b.obs, &dgs, &mut grads);
    (j, kl, grads)
}

/// Up to `iters` Adam ascent steps, adapting `ω` toward the KL bound after
/// each. Stops early at a stationary point.
pub fn mstep(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    b: &MStepBatch,
    omega: &mut f64,
    cfg: &MStepConfig,
) -> Result<MStepOutcome> {
    let saved = (policy.clone(), opt.clone(), *omega);
    let mut last = 0.0;
    for _ in 0..cfg.iters {
        let (j, _, g) = objective_grad(policy, b, *omega);
        if !j.is_finite() || g.iter().any(|x| !x.is_finite()) {
            (*policy, *opt, *omega) = saved;
            return Err(Error::NonFinite(format!("M-step objective {j}")));
        }
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < cfg.grad_tol {
            last = j;
            break;
        }
        opt.ascend(&mut policy.mlp.params, &g);
        let (_, kl) = objective(policy, b, *omega);
        *omega = (*omega - cfg.lr_omega * (cfg.kl_bound - kl)).max(0.0);
        last = j;
    }
    let (mut objective, mut kl) = objective(policy, b, *omega);
    let start = saved.0.mlp.params.clone();
    for _ in 0..20 {
        if !(kl > cfg.backtrack * cfg.kl_bound) {
            break;
        }
        for (p, s) in policy.mlp.params.iter_mut().zip(&start) {
            *p = s + 0.5 * (*p - s);
        }
        (objective, kl) = self::objective(policy, b, *omega);
    }
    if !(kl <= cfg.rollback * cfg.kl_bound) {
        (*policy, *opt, *omega) = saved;
        return Ok(MStepOutcome {
            objective: last,
            kl,
            rolled_back: true,
        });
    }
    Ok(MStepOutcome {
        objective,
        kl,
        rolled_back: false,
    })
}
