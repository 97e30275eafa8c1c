//! Collect, fit critics, E-step, M-step.

use std::io::Write;

use serde::Serialize;

use super::buffer::{ReplayBuffer, Transition};
use super::critic::CriticSet;
use super::estep::{estep, DualVars, EStepConfig, ParticleValues};
use super::mstep::{mstep, MStepBatch, MStepConfig};
use super::policy::{squash, GaussianPolicy};
use crate::env::{MegEnv, State};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::{self, ids, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CvpoConfig {
    pub iterations: usize,
    /// Environment steps per iteration.
    pub steps_per_iter: usize,
    /// States per E/M batch.
    pub batch_states: usize,
    pub particles: usize,
    pub critic_steps: usize,
    pub critic_batch: usize,
    pub critic_lr: f64,
    pub polyak: f64,
    pub buffer: usize,
    /// Standardize rewards for the reward critic with exponentially
    /// weighted statistics over roughly the last `reward_window` rewards.
    /// The E-step solution is invariant to this affine map. 0 disables.
    pub reward_window: usize,
    pub estep: EStepConfig,
    pub mstep: MStepConfig,
}

impl Default for CvpoConfig {
    fn default() -> Self {
        CvpoConfig {
            iterations: 200,
            steps_per_iter: 64,
            batch_states: 64,
            particles: 32,
            critic_steps: 128,
            critic_batch: 256,
            critic_lr: 1e-3,
            polyak: 0.995,
            buffer: 100_000,
            reward_window: 128,
            estep: EStepConfig::default(),
            mstep: MStepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    #[serde(rename = "mean_R")]
    pub mean_r: f64,
    pub mean_mse: f64,
    #[serde(rename = "mean_D")]
    pub mean_d: f64,
    #[serde(rename = "mean_E")]
    pub mean_e: f64,
    #[serde(rename = "viol_D_rate")]
    pub viol_d_rate: f64,
    #[serde(rename = "viol_E_rate")]
    pub viol_e_rate: f64,
    pub zeta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub kl_m: f64,
}

pub fn write_log_csv<W: Write>(out: W, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Per-iteration rollout statistics shared by both solvers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RolloutStats {
    pub mean_r: f64,
    pub mean_mse: f64,
    pub mean_d: f64,
    pub mean_e: f64,
    pub viol_d_rate: f64,
    pub viol_e_rate: f64,
}

impl RolloutStats {
    pub fn add(&mut self, reward: f64, mse: f64, d: f64, e: f64, costs: [f64; 2]) {
        self.mean_r += reward;
        self.mean_mse += mse;
        self.mean_d += d;
        self.mean_e += e;
        self.viol_d_rate += f64::from(u8::from(costs[0] > 0.0));
        self.viol_e_rate += f64::from(u8::from(costs[1] > 0.0));
    }

    pub fn finish(mut self, n: usize) -> Self {
        let n = n as f64;
        for v in [
            &mut self.mean_r,
            &mut self.mean_mse,
            &mut self.mean_d,
            &mut self.mean_e,
            &mut self.viol_d_rate,
            &mut self.viol_e_rate,
        ] {
            *v /= n;
        }
        self
    }

    pub fn row(&self, iter: usize, zeta: f64, lambda: [f64; 2], kl_m: f64) -> TrainLogRow {
        TrainLogRow {
            iter,
            mean_r: self.mean_r,
            mean_mse: self.mean_mse,
            mean_d: self.mean_d,
            mean_e: self.mean_e,
            viol_d_rate: self.viol_d_rate,
            viol_e_rate: self.viol_e_rate,
            zeta,
            lambda1: lambda[0],
            lambda2: lambda[1],
            kl_m,
        }
    }
}

/// Continuing rollout over fixed-length episodes.
#[derive(Debug, Clone)]
pub struct Collector {
    pub state: State,
    pub t: usize,
    pub rng: Stream,
}

impl Collector {
    pub fn new(env: &MegEnv, mut rng: Stream) -> Self {
        let state = env.reset(&mut rng);
        Collector { state, t: 0, rng }
    }

    /// Moves to the next state, restarting at episode boundaries.
    pub fn advance(&mut self, env: &MegEnv, next: State) {
        self.t += 1;
        if self.t == env.params.episode_len {
            self.t = 0;
            self.state = env.reset(&mut self.rng);
        } else {
            self.state = next;
        }
    }
}

/// Running mean and variance whose sample weights stop shrinking once
/// `window` samples have been seen: exact for the first `window`, then
/// exponentially weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningStats {
    window: f64,
    n: u64,
    mean: f64,
    var: f64,
}

impl RunningStats {
    pub fn new(window: usize) -> Self {
        RunningStats {
            window: window.max(1) as f64,
            n: 0,
            mean: 0.0,
            var: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let k = (self.n as f64).min(self.window);
        let d = x - self.mean;
        self.mean += d / k;
        self.var = (1.0 - 1.0 / k) * (self.var + d * d / k);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    /// `(mean, std)`, or the identity when the spread is negligible.
    pub fn affine(&self) -> (f64, f64) {
        let sd = self.std();
        if sd > 1e-12 {
            (self.mean, sd)
        } else {
            (0.0, 1.0)
        }
    }
}

pub struct CvpoOutcome {
    pub policy: GaussianPolicy,
    pub critics: CriticSet,
    pub duals: DualVars,
    pub log: Vec<TrainLogRow>,
    pub rollbacks: usize,
}

pub type Checkpoint<'a> = &'a mut dyn FnMut(usize, &GaussianPolicy) -> Result<()>;

pub fn train(
    env: &MegEnv,
    cfg: &CvpoConfig,
    seed: u64,
    mut checkpoint: Option<(usize, Checkpoint<'_>)>,
) -> Result<CvpoOutcome> {
    let mut init = rng::stream(seed, ids::POLICY_INIT);
    let mut policy = GaussianPolicy::new(&mut init);
    let mut critics = CriticSet::new(cfg.critic_lr, cfg.polyak, &mut init);
    let mut opt = Adam::new(policy.mlp.params.len(), cfg.mstep.lr);
    let mut duals = DualVars::default();
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let mut collector = Collector::new(env, rng::stream(seed, ids::ENV));
    let mut r = rng::stream(seed, ids::TRAIN);
    let estep_cfg = EStepConfig {
        eps: env.thresholds(),
        ..cfg.estep
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut rollbacks = 0;
    let mut reward_stats = RunningStats::new(cfg.reward_window);

    for iter in 0..cfg.iterations {
        let mut stats = RolloutStats::default();
        for _ in 0..cfg.steps_per_iter {
            let obs = env.observe(&collector.state);
            let (a, _, _) = policy.sample(&obs, &mut r);
            let out = env.step(&collector.state, a, &mut collector.rng)?;
            reward_stats.push(out.reward);
            stats.add(
                out.reward,
                out.mse,
                out.breakdown.latency.total,
                out.breakdown.energy.total,
                out.costs,
            );
            buffer.push(Transition {
                obs,
                action: [a.alpha, a.beta],
                reward: out.reward,
                costs: out.costs,
                next_obs: env.observe(&out.next),
            });
            collector.advance(env, out.next);
        }

        if cfg.reward_window > 0 {
            critics.reward_affine = reward_stats.affine();
        }
        for _ in 0..cfg.critic_steps {
            let batch = buffer.sample(cfg.critic_batch, &mut r);
            critics.update(&batch, env.params.gamma, &policy, &mut r)?;
        }

        let states: Vec<_> = buffer
            .sample(cfg.batch_states, &mut r)
            .into_iter()
            .map(|t| t.obs)
            .collect();
        let old: Vec<_> = states.iter().map(|o| policy.dist(o)).collect();
        let k = cfg.particles;
        let mut particles = Vec::with_capacity(states.len() * k);
        let mut values = ParticleValues {
            states: states.len(),
            k,
            qr: Vec::with_capacity(states.len() * k),
            qc: [
                Vec::with_capacity(states.len() * k),
                Vec::with_capacity(states.len() * k),
            ],
        };
        let mut pairs = Vec::with_capacity(states.len() * k);
        for (o, g) in states.iter().zip(&old) {
            for _ in 0..k {
                let u = g.sample_u(&mut r);
                let a = squash(&u);
                pairs.push((*o, [a.alpha, a.beta]));
                particles.push(u);
            }
        }
        for q in critics.values_batch(&pairs) {
            values.qr.push(q[0]);
            values.qc[0].push(q[1]);
            values.qc[1].push(q[2]);
        }
        let weights = estep(&values, &mut duals, &estep_cfg);
        let batch = MStepBatch {
            obs: states,
            old,
            k,
            particles,
            weights,
        };
        let m = mstep(&mut policy, &mut opt, &batch, &mut duals.omega, &cfg.mstep)?;
        rollbacks += usize::from(m.rolled_back);
        log.push(
            stats
                .finish(cfg.steps_per_iter)
                .row(iter, duals.zeta, duals.lambda, m.kl),
        );

        if let Some((every, f)) = checkpoint.as_mut() {
            if *every > 0 && (iter + 1) % *every == 0 {
                f(iter + 1, &policy)?;
            }
        }
    }
    Ok(CvpoOutcome {
        policy,
        critics,
        duals,
        log,
        rollbacks,
    })
}
