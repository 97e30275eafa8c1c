//! PPO with a Lagrangian penalty on the cost advantages.

use rand::seq::SliceRandom;
use rand::Rng;

use super::pid::{PidGains, PidState};
use crate::cvpo::policy::{squash, DiagGauss, DistGrad, GaussianPolicy, ACT_DIM};
use crate::cvpo::train::{Checkpoint, Collector, RolloutStats, TrainLogRow};
use crate::env::{MegEnv, Obs, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::rng::{self, ids};

const HIDDEN: usize = 64;
const HEADS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub iterations: usize,
    pub steps_per_iter: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub gae_lambda: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// `None` runs plain PPO on the reward advantage alone.
    pub pid: Option<PidGains>,
    /// Standardize the penalized advantage per iteration.
    pub normalize_adv: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            iterations: 200,
            steps_per_iter: 256,
            epochs: 10,
            minibatch: 64,
            clip: 0.2,
            gae_lambda: 0.95,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            pid: Some(PidGains::default()),
            normalize_adv: true,
        }
    }
}

/// State-value approximator.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub mlp: Mlp,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ValueNet {
            mlp: Mlp::new(&[OBS_DIM, HIDDEN, HIDDEN, 1], false, rng),
        }
    }

    pub fn values(&self, obs: &[Obs]) -> Vec<f64> {
        let x: Vec<f64> = obs.iter().flatten().copied().collect();
        self.mlp.forward_batch(&x).0.into_raw_vec_and_offset().0
    }

    pub fn loss_and_grad(&self, obs: &[Obs], targets: &[f64]) -> (f64, Vec<f64>) {
        let scale = 1.0 / obs.len() as f64;
        let x: Vec<f64> = obs.iter().flatten().copied().collect();
        let (mut out, trace) = self.mlp.forward_batch(&x);
        let mut loss = 0.0;
        for (v, y) in out.iter_mut().zip(targets) {
            let r = *v - y;
            loss += r * r * scale;
            *v = 2.0 * r * scale;
        }
        let mut grads = vec![0.0; self.mlp.params.len()];
        self.mlp.backward_batch(&trace, &out, &mut grads);
        (loss, grads)
    }
}

/// Generalized advantage estimates for one head. `ends[t]` marks the last
/// step of an episode; the chain is cut there but `next_values[t]` is still
/// bootstrapped (episodes end by time limit).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        if ends[t] || t + 1 == n {
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// `A_R − Σ_i λ_i A_{C_i}`.
pub fn penalized_advantage(a_r: &[f64], a_c: [&[f64]; 2], lambda: [f64; 2]) -> Vec<f64> {
    (0..a_r.len())
        .map(|t| a_r[t] - lambda[0] * a_c[0][t] - lambda[1] * a_c[1][t])
        .collect()
}

/// On-policy samples for the clipped surrogate, in pre-squash space (the
/// squash Jacobian cancels in the ratio).
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub obs: Vec<Obs>,
    pub u: Vec<[f64; ACT_DIM]>,
    pub logp_old: Vec<f64>,
    pub adv: Vec<f64>,
}

impl PpoBatch {
    fn subset(&self, idx: &[usize]) -> PpoBatch {
        PpoBatch {
            obs: idx.iter().map(|&i| self.obs[i]).collect(),
            u: idx.iter().map(|&i| self.u[i]).collect(),
            logp_old: idx.iter().map(|&i| self.logp_old[i]).collect(),
            adv: idx.iter().map(|&i| self.adv[i]).collect(),
        }
    }
}

fn clip_range(ratio: f64, clip: f64) -> f64 {
    ratio.clamp(1.0 - clip, 1.0 + clip)
}

/// `mean_i min(ρ_i A_i, clip(ρ_i) A_i)`.
pub fn surrogate(policy: &GaussianPolicy, b: &PpoBatch, clip: f64) -> f64 {
    let dists = policy.dist_batch(&b.obs);
    (0..b.obs.len())
        .map(|i| {
            let ratio = (dists[i].log_prob(&b.u[i]) - b.logp_old[i]).exp();
            (ratio * b.adv[i]).min(clip_range(ratio, clip) * b.adv[i])
        })
        .sum::<f64>()
        / b.obs.len() as f64
}

/// Surrogate value and its parameter gradient. Samples on the clipped
/// branch contribute nothing.
pub fn surrogate_grad(policy: &GaussianPolicy, b: &PpoBatch, clip: f64) -> Result<(f64, Vec<f64>)> {
    let n = b.obs.len() as f64;
    let dists = policy.dist_batch(&b.obs);
    let mut value = 0.0;
    let mut dgs = Vec::with_capacity(b.obs.len());
    for (i, g) in dists.iter().enumerate() {
        let ratio = (g.log_prob(&b.u[i]) - b.logp_old[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!("probability ratio at sample {i}")));
        }
        let (raw, clipped) = (ratio * b.adv[i], clip_range(ratio, clip) * b.adv[i]);
        value += raw.min(clipped) / n;
        let mut dg = DistGrad::default();
        if raw <= clipped {
            let c = ratio * b.adv[i] / n;
            for d in 0..ACT_DIM {
                let s2 = (2.0 * g.log_std[d]).exp();
                let diff = b.u[i][d] - g.mean[d];
                dg.mean[d] = c * diff / s2;
                dg.log_std[d] = c * (diff * diff / s2 - 1.0);
            }
        }
        dgs.push(dg);
    }
    let mut grads = vec![0.0; policy.mlp.params.len()];
    policy.backward(&b.obs, &dgs, &mut grads);
    Ok((value, grads))
}

/// One clipped-surrogate ascent step; returns the pre-step objective.
pub fn ppolag_update(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    b: &PpoBatch,
    clip: f64,
) -> Result<f64> {
    let (value, grads) = surrogate_grad(policy, b, clip)?;
    opt.ascend(&mut policy.mlp.params, &grads);
    Ok(value)
}

pub struct PpoOutcome {
    pub policy: GaussianPolicy,
    pub values: [ValueNet; HEADS],
    pub lambda: [f64; 2],
    pub log: Vec<TrainLogRow>,
}

/// PPO-Lagrangian training. `J_C` for the multiplier update is the batch
/// mean cost scaled by `1/(1−γ)`, comparable to the discounted thresholds.
pub fn train(
    env: &MegEnv,
    cfg: &PpoConfig,
    seed: u64,
    mut checkpoint: Option<(usize, Checkpoint<'_>)>,
) -> Result<PpoOutcome> {
    if cfg.steps_per_iter == 0 || cfg.minibatch == 0 {
        return Err(Error::Invalid {
            key: "ppo.steps_per_iter".into(),
            reason: "batch sizes must be > 0".into(),
        });
    }
    let mut init = rng::stream(seed, ids::POLICY_INIT);
    let mut policy = GaussianPolicy::new(&mut init);
    let mut values = [
        ValueNet::new(&mut init),
        ValueNet::new(&mut init),
        ValueNet::new(&mut init),
    ];
    let mut opt = Adam::new(policy.mlp.params.len(), cfg.policy_lr);
    let nv = values[0].mlp.params.len();
    let mut vopts = [
        Adam::new(nv, cfg.value_lr),
        Adam::new(nv, cfg.value_lr),
        Adam::new(nv, cfg.value_lr),
    ];
    let mut pid = cfg.pid.map(PidState::new);
    let mut collector = Collector::new(env, rng::stream(seed, ids::ENV));
    let mut r = rng::stream(seed, ids::TRAIN);
    let eps = env.thresholds();
    let gamma = env.params.gamma;
    let n = cfg.steps_per_iter;
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let mut stats = RolloutStats::default();
        let mut obs = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);
        let mut logp_old = Vec::with_capacity(n);
        let mut signals: [Vec<f64>; HEADS] = Default::default();
        let mut ends = Vec::with_capacity(n);
        for _ in 0..n {
            let o = env.observe(&collector.state);
            let g = policy.dist(&o);
            let u = g.sample_u(&mut r);
            let out = env.step(&collector.state, squash(&u), &mut collector.rng)?;
            stats.add(
                out.reward,
                out.mse,
                out.breakdown.latency.total,
                out.breakdown.energy.total,
                out.costs,
            );
            obs.push(o);
            next_obs.push(env.observe(&out.next));
            us.push(u);
            logp_old.push(g.log_prob(&u));
            signals[0].push(out.reward);
            signals[1].push(out.costs[0]);
            signals[2].push(out.costs[1]);
            ends.push(collector.t + 1 == env.params.episode_len);
            collector.advance(env, out.next);
        }

        let mut adv: [Vec<f64>; HEADS] = Default::default();
        let mut returns: [Vec<f64>; HEADS] = Default::default();
        for h in 0..HEADS {
            let v = values[h].values(&obs);
            let v_next = values[h].values(&next_obs);
            adv[h] = gae(&signals[h], &v, &v_next, &ends, gamma, cfg.gae_lambda);
            returns[h] = adv[h].iter().zip(&v).map(|(a, v)| a + v).collect();
        }

        let lambda = match pid.as_mut() {
            Some(p) => {
                let mean = |s: &[f64]| s.iter().sum::<f64>() / n as f64 / (1.0 - gamma);
                p.update([mean(&signals[1]), mean(&signals[2])], eps)
            }
            None => [0.0; 2],
        };
        let mut a = match pid {
            Some(_) => penalized_advantage(&adv[0], [&adv[1], &adv[2]], lambda),
            None => adv[0].clone(),
        };
        if cfg.normalize_adv {
            let m = a.iter().sum::<f64>() / n as f64;
            let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            let sd = if sd > 1e-12 { sd } else { 1.0 };
            a.iter_mut().for_each(|x| *x = (*x - m) / sd);
        }

        let old: Vec<DiagGauss> = policy.dist_batch(&obs);
        let batch = PpoBatch {
            obs,
            u: us,
            logp_old,
            adv: a,
        };
        let mut idx: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            idx.shuffle(&mut r);
            for chunk in idx.chunks(cfg.minibatch) {
                let mb = batch.subset(chunk);
                ppolag_update(&mut policy, &mut opt, &mb, cfg.clip)?;
                for h in 0..HEADS {
                    let targets: Vec<f64> = chunk.iter().map(|&i| returns[h][i]).collect();
                    let (_, g) = values[h].loss_and_grad(&mb.obs, &targets);
                    vopts[h].descend(&mut values[h].mlp.params, &g);
                }
            }
        }
        let kl = policy
            .dist_batch(&batch.obs)
            .iter()
            .zip(&old)
            .map(|(new, o)| o.kl(new))
            .sum::<f64>()
            / n as f64;
        log.push(stats.finish(n).row(iter, 0.0, lambda, kl));

        if let Some((every, f)) = checkpoint.as_mut() {
            if *every > 0 && (iter + 1) % *every == 0 {
                f(iter + 1, &policy)?;
            }
        }
    }
    Ok(PpoOutcome {
        policy,
        values,
        lambda: pid.map_or([0.0; 2], |p| p.lambda),
        log,
    })
}
