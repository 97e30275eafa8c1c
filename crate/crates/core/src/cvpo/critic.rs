//! Reward and cost critics with Polyak-averaged targets.

use rand::Rng;

use super::buffer::Transition;
use super::policy::{squash, GaussianPolicy};
use crate::env::{Obs, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};

pub const HEADS: usize = 3;
const HIDDEN: usize = 64;

/// Head order in every `[_; HEADS]` array.
pub const REWARD: usize = 0;

/// `Q(s, a)` over `[obs, 2a - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub mlp: Mlp,
}

fn input(obs: &Obs, a: &[f64; 2]) -> [f64; OBS_DIM + 2] {
    [obs[0], obs[1], obs[2], 2.0 * a[0] - 1.0, 2.0 * a[1] - 1.0]
}

fn inputs(batch: &[(Obs, [f64; 2])]) -> Vec<f64> {
    batch.iter().flat_map(|(o, a)| input(o, a)).collect()
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Critic {
            mlp: Mlp::new(&[OBS_DIM + 2, HIDDEN, HIDDEN, 1], false, rng),
        }
    }

    pub fn q(&self, obs: &Obs, a: &[f64; 2]) -> f64 {
        self.mlp.forward(&input(obs, a))[0]
    }

    /// Mean squared error against `targets`.
    pub fn loss(&self, batch: &[(Obs, [f64; 2])], targets: &[f64]) -> f64 {
        batch
            .iter()
            .zip(targets)
            .map(|((o, a), y)| (self.q(o, a) - y).powi(2))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// `Q` at each `(obs, a)` pair in one batched pass.
    pub fn q_batch(&self, batch: &[(Obs, [f64; 2])]) -> Vec<f64> {
        self.mlp
            .forward_batch(&inputs(batch))
            .0
            .into_raw_vec_and_offset()
            .0
    }

    pub fn loss_and_grad(&self, batch: &[(Obs, [f64; 2])], targets: &[f64]) -> (f64, Vec<f64>) {
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; self.mlp.params.len()];
        let (mut out, trace) = self.mlp.forward_batch(&inputs(batch));
        let mut loss = 0.0;
        for (q, y) in out.iter_mut().zip(targets) {
            let r = *q - y;
            loss += r * r * scale;
            *q = 2.0 * r * scale;
        }
        self.mlp.backward_batch(&trace, &out, &mut grads);
        (loss, grads)
    }
}

#[derive(Debug, Clone)]
pub struct CriticSet {
    pub online: [Critic; HEADS],
    pub target: [Critic; HEADS],
    opts: [Adam; HEADS],
    pub polyak: f64,
    /// `(shift, scale)` applied to rewards before they enter the targets.
    pub reward_affine: (f64, f64),
}

impl CriticSet {
    pub fn new<R: Rng + ?Sized>(lr: f64, polyak: f64, rng: &mut R) -> Self {
        let online = [Critic::new(rng), Critic::new(rng), Critic::new(rng)];
        let n = online[0].mlp.params.len();
        CriticSet {
            target: online.clone(),
            online,
            opts: [Adam::new(n, lr), Adam::new(n, lr), Adam::new(n, lr)],
            polyak,
            reward_affine: (0.0, 1.0),
        }
    }

    /// Online values for many `(obs, a)` pairs, one batched pass per head.
    pub fn values_batch(&self, batch: &[(Obs, [f64; 2])]) -> Vec<[f64; HEADS]> {
        let qs = self.online.each_ref().map(|c| c.q_batch(batch));
        (0..batch.len())
            .map(|i| [qs[0][i], qs[1][i], qs[2][i]])
            .collect()
    }

    /// `[Q_R, Q_C1, Q_C2]` from the online critics.
    pub fn values(&self, obs: &Obs, a: &[f64; 2]) -> [f64; HEADS] {
        let x = input(obs, a);
        self.online.each_ref().map(|c| c.mlp.forward(&x)[0])
    }

    /// TD(0) targets `r_i + γ Q_target_i(s', a')` with one `a' ~ π` per
    /// transition shared across heads. The reward head sees rewards through
    /// `reward_affine`.
    pub fn targets<R: Rng + ?Sized>(
        &self,
        batch: &[&Transition],
        gamma: f64,
        policy: &GaussianPolicy,
        rng: &mut R,
    ) -> Result<[Vec<f64>; HEADS]> {
        let next_obs: Vec<Obs> = batch.iter().map(|t| t.next_obs).collect();
        let next: Vec<(Obs, [f64; 2])> = policy
            .dist_batch(&next_obs)
            .iter()
            .zip(&next_obs)
            .map(|(g, o)| {
                let a = squash(&g.sample_u(rng));
                (*o, [a.alpha, a.beta])
            })
            .collect();
        let boots: [Vec<f64>; HEADS] = if gamma == 0.0 {
            Default::default()
        } else {
            self.target.each_ref().map(|c| c.q_batch(&next))
        };
        let (shift, scale) = self.reward_affine;
        let mut ys: [Vec<f64>; HEADS] = Default::default();
        for (i, t) in batch.iter().enumerate() {
            let r = [(t.reward - shift) / scale, t.costs[0], t.costs[1]];
            for h in 0..HEADS {
                let boot = if gamma == 0.0 {
                    0.0
                } else {
                    gamma * boots[h][i]
                };
                let y = r[h] + boot;
                if !y.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "critic target for head {h}: r = {}, bootstrap = {boot}",
                        r[h]
                    )));
                }
                ys[h].push(y);
            }
        }
        Ok(ys)
    }

    /// One regression step per head, then a Polyak target update.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        gamma: f64,
        policy: &GaussianPolicy,
        rng: &mut R,
    ) -> Result<[f64; HEADS]> {
        let ys = self.targets(batch, gamma, policy, rng)?;
        let xs: Vec<(Obs, [f64; 2])> = batch.iter().map(|t| (t.obs, t.action)).collect();
        let mut losses = [0.0; HEADS];
        for h in 0..HEADS {
            let (loss, g) = self.online[h].loss_and_grad(&xs, &ys[h]);
            self.opts[h].descend(&mut self.online[h].mlp.params, &g);
            losses[h] = loss;
        }
        for h in 0..HEADS {
            self.target[h]
                .mlp
                .polyak_from(&self.online[h].mlp, self.polyak);
        }
        Ok(losses)
    }
}
