//! Squashed diagonal-Gaussian policy over `(α, β)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Action, Actor, Obs, OBS_DIM};
use crate::nn::Mlp;
use crate::rng::Stream;

pub const ACT_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const HIDDEN: usize = 64;
const INIT_STD: f64 = 0.5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pre-squash diagonal Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagGauss {
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
}

impl DiagGauss {
    pub fn log_prob(&self, u: &[f64; ACT_DIM]) -> f64 {
        (0..ACT_DIM)
            .map(|d| {
                let z = (u[d] - self.mean[d]) / self.log_std[d].exp();
                -0.5 * z * z - self.log_std[d] - 0.5 * LN_2PI
            })
            .sum()
    }

    /// `KL(self ‖ other)`.
    pub fn kl(&self, other: &DiagGauss) -> f64 {
        (0..ACT_DIM)
            .map(|d| {
                let (s1, s2) = (self.log_std[d].exp(), other.log_std[d].exp());
                other.log_std[d] - self.log_std[d]
                    + (s1 * s1 + (self.mean[d] - other.mean[d]).powi(2)) / (2.0 * s2 * s2)
                    - 0.5
            })
            .sum()
    }

    pub fn sample_u<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; ACT_DIM] {
        let mut u = [0.0; ACT_DIM];
        for d in 0..ACT_DIM {
            let xi: f64 = StandardNormal.sample(rng);
            u[d] = self.mean[d] + self.log_std[d].exp() * xi;
        }
        u
    }
}

pub fn squash(u: &[f64; ACT_DIM]) -> Action {
    Action::new(sigmoid(u[0]), sigmoid(u[1]))
}

/// Log-density of the squashed action, given its pre-squash value.
pub fn squashed_log_prob(g: &DiagGauss, u: &[f64; ACT_DIM]) -> f64 {
    let jac: f64 = u
        .iter()
        .map(|&x| {
            let s = sigmoid(x);
            (s * (1.0 - s)).ln()
        })
        .sum();
    g.log_prob(u) - jac
}

/// Log-density of an interior action `a ∈ (0, 1)²`.
pub fn action_log_prob(g: &DiagGauss, a: &Action) -> f64 {
    squashed_log_prob(g, &[logit(a.alpha), logit(a.beta)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mlp: Mlp,
}

/// Gradient of a scalar objective with respect to the distribution
/// parameters at one state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DistGrad {
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut mlp = Mlp::new(&[OBS_DIM, HIDDEN, HIDDEN, 2 * ACT_DIM], false, rng);
        let raw = ((INIT_STD.ln() + 2.0) / 3.0).atanh();
        let (w, b) = mlp.output_layer_mut();
        w.iter_mut().for_each(|v| *v *= 0.01);
        b[..ACT_DIM].iter_mut().for_each(|v| *v = 0.0);
        b[ACT_DIM..].iter_mut().for_each(|v| *v = raw);
        GaussianPolicy { mlp }
    }

    /// Log-std soft-clamped into `(LOG_STD_MIN, LOG_STD_MAX)` by tanh.
    fn from_raw(out: &[f64]) -> DiagGauss {
        let mid = 0.5 * (LOG_STD_MAX + LOG_STD_MIN);
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        DiagGauss {
            mean: [out[0], out[1]],
            log_std: [mid + half * out[2].tanh(), mid + half * out[3].tanh()],
        }
    }

    pub fn dist(&self, obs: &Obs) -> DiagGauss {
        Self::from_raw(&self.mlp.forward(obs))
    }

    pub fn dist_batch(&self, obs: &[Obs]) -> Vec<DiagGauss> {
        let x: Vec<f64> = obs.iter().flatten().copied().collect();
        let (out, _) = self.mlp.forward_batch(&x);
        out.rows()
            .into_iter()
            .map(|row| Self::from_raw(row.as_slice().expect("row-major")))
            .collect()
    }

    /// Draws an action; returns it with its pre-squash value and
    /// squashed log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &Obs, rng: &mut R) -> (Action, [f64; ACT_DIM], f64) {
        let g = self.dist(obs);
        let u = g.sample_u(rng);
        (squash(&u), u, squashed_log_prob(&g, &u))
    }

    pub fn mean_action(&self, obs: &Obs) -> Action {
        squash(&self.dist(obs).mean)
    }

    /// Accumulates `grads += ∂/∂θ Σ_s ⟨dg_s, dist(s)⟩`.
    pub fn backward(&self, obs: &[Obs], dg: &[DistGrad], grads: &mut [f64]) {
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let x: Vec<f64> = obs.iter().flatten().copied().collect();
        let (mut out, trace) = self.mlp.forward_batch(&x);
        for (mut row, g) in out.rows_mut().into_iter().zip(dg) {
            for d in 0..ACT_DIM {
                row[ACT_DIM + d] = g.log_std[d] * half * (1.0 - row[ACT_DIM + d].tanh().powi(2));
                row[d] = g.mean[d];
            }
        }
        self.mlp.backward_batch(&trace, &out, grads);
    }
}

/// Acts with the squashed mean.
pub struct MeanActor<'a>(pub &'a GaussianPolicy);

impl Actor for MeanActor<'_> {
    fn act(&self, obs: &Obs, _rng: &mut Stream) -> Action {
        self.0.mean_action(obs)
    }
}

/// Acts by sampling.
pub struct SampleActor<'a>(pub &'a GaussianPolicy);

impl Actor for SampleActor<'_> {
    fn act(&self, obs: &Obs, rng: &mut Stream) -> Action {
        self.0.sample(obs, rng).0
    }
}
