//! Noise-prediction network and rectified-flow distillation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::NoiseSchedule;
use super::teacher::{teacher_flow, teacher_noise, LatentPrior};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};

pub const HIDDEN: usize = 64;
const TAU_FEATURES: usize = 3;

/// Anything that predicts the noise component of a latent at level `τ`.
pub trait NoisePredictor {
    fn predict(&self, z: &[f64], tau: f64) -> Vec<f64>;
}

/// The closed-form teacher, usable directly as a sampler's noise model.
#[derive(Debug, Clone)]
pub struct AnalyticTeacher {
    pub prior: LatentPrior,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for AnalyticTeacher {
    fn predict(&self, z: &[f64], tau: f64) -> Vec<f64> {
        teacher_noise(z, self.schedule.omega(tau), &self.prior)
    }
}

/// `ε_ϖ(z, τ)`: tanh MLP over `[z, τ/L_max, sin(πτ/L_max), cos(πτ/L_max)]`
/// with a linear skip path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNet {
    pub mlp: Mlp,
    l_max: usize,
}

/// One regression example: input latent, level and teacher target.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSample {
    pub z: Vec<f64>,
    pub tau: f64,
    pub target: Vec<f64>,
}

impl NoiseNet {
    pub fn new<R: Rng + ?Sized>(dim: usize, l_max: usize, rng: &mut R) -> Self {
        let mut mlp = Mlp::new(&[dim + TAU_FEATURES, HIDDEN, HIDDEN, dim], true, rng);
        mlp.skip_mut().iter_mut().for_each(|w| *w = 0.0);
        NoiseNet { mlp, l_max }
    }

    /// Net whose output is exactly `diag ⊙ z + bias` for every `τ`.
    pub fn affine<R: Rng + ?Sized>(diag: &[f64], bias: &[f64], l_max: usize, rng: &mut R) -> Self {
        let dim = diag.len();
        let mut net = NoiseNet::new(dim, l_max, rng);
        let (w, b) = net.mlp.output_layer_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        b.copy_from_slice(bias);
        let width = dim + TAU_FEATURES;
        for (d, &g) in diag.iter().enumerate() {
            net.mlp.skip_mut()[d * width + d] = g;
        }
        net
    }

    pub fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    fn input(&self, z: &[f64], tau: f64) -> Vec<f64> {
        let r = tau / self.l_max as f64;
        let mut x = Vec::with_capacity(z.len() + TAU_FEATURES);
        x.extend_from_slice(z);
        x.extend([
            r,
            (std::f64::consts::PI * r).sin(),
            (std::f64::consts::PI * r).cos(),
        ]);
        x
    }

    /// Mean over samples of the per-dimension mean squared residual.
    pub fn loss(&self, batch: &[DistillSample]) -> f64 {
        let dim = self.dim() as f64;
        batch
            .iter()
            .map(|s| {
                let out = self.predict(&s.z, s.tau);
                out.iter()
                    .zip(&s.target)
                    .map(|(o, t)| (o - t).powi(2))
                    .sum::<f64>()
                    / dim
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn loss_and_grad(&self, batch: &[DistillSample]) -> (f64, Vec<f64>) {
        let dim = self.dim() as f64;
        let scale = 1.0 / (batch.len() as f64 * dim);
        let mut grads = vec![0.0; self.mlp.params.len()];
        let x: Vec<f64> = batch.iter().flat_map(|s| self.input(&s.z, s.tau)).collect();
        let (mut out, trace) = self.mlp.forward_batch(&x);
        let mut loss = 0.0;
        for (mut row, s) in out.rows_mut().into_iter().zip(batch) {
            for (o, t) in row.iter_mut().zip(&s.target) {
                loss += (*o - t).powi(2) * scale;
                *o = 2.0 * (*o - t) * scale;
            }
        }
        self.mlp.backward_batch(&trace, &out, &mut grads);
        (loss, grads)
    }

    /// One Adam step on `batch`; returns the pre-update loss.
    pub fn distill_step(&mut self, opt: &mut Adam, batch: &[DistillSample]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(batch);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "distillation loss {loss} on a batch of {}",
                batch.len()
            )));
        }
        opt.descend(&mut self.mlp.params, &grads);
        Ok(loss)
    }
}

impl NoisePredictor for NoiseNet {
    fn predict(&self, z: &[f64], tau: f64) -> Vec<f64> {
        self.mlp.forward(&self.input(z, tau))
    }
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws a latent from a diagonal Gaussian prior.
pub fn sample_prior<R: Rng + ?Sized>(prior: &LatentPrior, rng: &mut R) -> Vec<f64> {
    prior
        .mean
        .iter()
        .zip(&prior.var)
        .map(|(m, v)| {
            let e: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * e
        })
        .collect()
}

/// Rectified-flow batch: per sample draw a step count `L`, a window
/// `(τ_{l-1}, τ_l]` and `τ` inside it; noise a prior draw to `τ_l`, carry it
/// to `τ_{l-1}` with the exact flow, interpolate linearly to `τ` and label
/// the point with the teacher noise.
pub fn make_distill_batch<R: Rng + ?Sized>(
    prior: &LatentPrior,
    schedule: &NoiseSchedule,
    n: usize,
    rng: &mut R,
) -> Vec<DistillSample> {
    let dim = prior.dim();
    (0..n)
        .map(|_| {
            let steps = rng.random_range(1..=schedule.l_max);
            let l = rng.random_range(1..=steps);
            let w = schedule.windows(steps);
            let (lo, hi) = (w[l - 1], w[l]);
            let tau = hi - rng.random::<f64>() * (hi - lo);
            let z0 = sample_prior(prior, rng);
            let eps = standard_normal(dim, rng);
            let z_hi = schedule.forward_noise_tau(&z0, hi, &eps);
            let z_lo = teacher_flow(&z_hi, schedule.omega(hi), schedule.omega(lo), prior);
            let t = (tau - lo) / (hi - lo);
            let z: Vec<f64> = z_hi
                .iter()
                .zip(&z_lo)
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect();
            let target = teacher_noise(&z, schedule.omega(tau), prior);
            DistillSample { z, tau, target }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;
    use crate::rng::stream;

    fn toy_prior(dim: usize) -> LatentPrior {
        LatentPrior {
            mean: (0..dim).map(|d| 0.3 * (d as f64 - 2.0)).collect(),
            var: (0..dim).map(|d| 0.2 + 0.1 * d as f64).collect(),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(11, 0);
        let prior = toy_prior(6);
        let sched = NoiseSchedule::new(12, 0.98);
        let net = NoiseNet::new(6, 12, &mut rng);
        let mut net = net;
        net.mlp.skip_mut().iter_mut().for_each(|w| *w = 0.05);
        let batch = make_distill_batch(&prior, &sched, 8, &mut rng);
        let (_, g) = net.loss_and_grad(&batch);
        let probes = fd::probes(g.len(), 10, &mut rng);
        let mut p = net.mlp.params.clone();
        let err = fd::check(&mut p, &g, &probes, 1e-6, |p| {
            let mut n = net.clone();
            n.mlp.params.copy_from_slice(p);
            n.loss(&batch)
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn affine_teacher_is_a_fixed_point() {
        // At a fixed level the teacher is affine in z, so a net carrying it
        // on the skip path has zero loss.
        let mut rng = stream(12, 0);
        let prior = toy_prior(5);
        let sched = NoiseSchedule::new(12, 0.98);
        let tau = 7.0;
        let om = sched.omega(tau);
        let diag: Vec<f64> = prior
            .var
            .iter()
            .map(|s2| (1.0 - om).sqrt() / (om * s2 + 1.0 - om))
            .collect();
        let bias: Vec<f64> = prior
            .mean
            .iter()
            .zip(&diag)
            .map(|(m, g)| -om.sqrt() * m * g)
            .collect();
        let mut net = NoiseNet::affine(&diag, &bias, 12, &mut rng);
        let batch: Vec<DistillSample> = (0..32)
            .map(|_| {
                let z = standard_normal(5, &mut rng);
                let target = teacher_noise(&z, om, &prior);
                DistillSample { z, tau, target }
            })
            .collect();
        let mut opt = Adam::new(net.mlp.params.len(), 1e-3);
        let loss = net.distill_step(&mut opt, &batch).unwrap();
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn batch_targets_are_teacher_noise() {
        let mut rng = stream(13, 0);
        let prior = toy_prior(4);
        let sched = NoiseSchedule::new(12, 0.98);
        for s in make_distill_batch(&prior, &sched, 50, &mut rng) {
            assert!(s.tau > 0.0 && s.tau <= 12.0);
            assert_eq!(s.target, teacher_noise(&s.z, sched.omega(s.tau), &prior));
        }
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut rng = stream(14, 0);
        let mut net = NoiseNet::new(2, 12, &mut rng);
        let batch = vec![DistillSample {
            z: vec![f64::NAN, 0.0],
            tau: 1.0,
            target: vec![0.0, 0.0],
        }];
        let mut opt = Adam::new(net.mlp.params.len(), 1e-3);
        assert!(matches!(
            net.distill_step(&mut opt, &batch),
            Err(Error::NonFinite(_))
        ));
    }
}
