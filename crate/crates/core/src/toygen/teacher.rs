//! Closed-form teacher for Gaussian latents.
//!
//! With a diagonal Gaussian prior `N(μ, s²)` every noised marginal is
//! Gaussian, so both the posterior-mean noise and the probability-flow map
//! between two noise levels are affine per dimension.

/// Diagonal Gaussian fitted to encoded training latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LatentPrior {
    /// Moment matching over `samples` (population variance).
    pub fn fit(samples: &[Vec<f64>]) -> Self {
        assert!(!samples.is_empty());
        let dim = samples[0].len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v - m).powi(2) / n;
            }
        }
        LatentPrior { mean, var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Variance of the noised marginal at level `omega`.
    fn marginal_var(&self, d: usize, omega: f64) -> f64 {
        omega * self.var[d] + 1.0 - omega
    }
}

/// Posterior-mean noise `E[ε | z]` at level `omega`.
///
/// Written as `(z - √Ω μ)·√(1-Ω) / (Ω s² + 1 - Ω)`, which equals
/// `(z - √Ω m(z)) / √(1-Ω)` with the posterior mean `m(z)` of `Z0`, and
/// stays finite as `Ω → 1`.
pub fn teacher_noise(z: &[f64], omega: f64, prior: &LatentPrior) -> Vec<f64> {
    let a = omega.sqrt();
    let b = (1.0 - omega).sqrt();
    z.iter()
        .enumerate()
        .map(|(d, &zd)| (zd - a * prior.mean[d]) * b / prior.marginal_var(d, omega))
        .collect()
}

/// Posterior mean of `Z0` given `z` at level `omega`.
pub fn posterior_mean(z: &[f64], omega: f64, prior: &LatentPrior) -> Vec<f64> {
    let a = omega.sqrt();
    z.iter()
        .enumerate()
        .map(|(d, &zd)| {
            prior.mean[d]
                + a * prior.var[d] / prior.marginal_var(d, omega) * (zd - a * prior.mean[d])
        })
        .collect()
}

/// Exact probability-flow transport from level `omega_from` to `omega_to`.
pub fn teacher_flow(z: &[f64], omega_from: f64, omega_to: f64, prior: &LatentPrior) -> Vec<f64> {
    let (a_from, a_to) = (omega_from.sqrt(), omega_to.sqrt());
    z.iter()
        .enumerate()
        .map(|(d, &zd)| {
            let scale =
                (prior.marginal_var(d, omega_to) / prior.marginal_var(d, omega_from)).sqrt();
            a_to * prior.mean[d] + scale * (zd - a_from * prior.mean[d])
        })
        .collect()
}
