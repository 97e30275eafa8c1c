//! Constrained MDP over frames: observe the channel and the previous
//! frame's costs, choose `(α, β)`, receive quality reward and costs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::channel::{mean_gain, sample_frame};
use crate::costmodel::{breakdown, cost_vector, CompressionMode, CostBreakdown};
use crate::error::{Error, Result};
use crate::rng::{self, ids, Stream};
use crate::sysmodel::{EnvParams, SystemParams};
use crate::toygen::task::TaskSpec;
use crate::toygen::{QualityTable, ToyPipeline};

/// Dimension of the normalized observation.
pub const OBS_DIM: usize = 3;
pub type Obs = [f64; OBS_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    /// Linear channel gain of the upcoming frame.
    pub h: f64,
    pub d_prev: f64,
    pub e_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub alpha: f64,
    pub beta: f64,
}

impl Action {
    /// Clamps into the unit box.
    pub fn new(alpha: f64, beta: f64) -> Self {
        Action {
            alpha: alpha.clamp(0.0, 1.0),
            beta: beta.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub costs: [f64; 2],
    pub next: State,
    pub breakdown: CostBreakdown,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityMode {
    Oracle,
    Surrogate,
}

impl FromStr for QualityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(QualityMode::Oracle),
            "surrogate" => Ok(QualityMode::Surrogate),
            _ => Err(Error::invalid(
                "mode",
                format!("expected oracle or surrogate, got `{s}`"),
            )),
        }
    }
}

impl fmt::Display for QualityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityMode::Oracle => "oracle",
            QualityMode::Surrogate => "surrogate",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Quality {
    Surrogate(Arc<QualityTable>),
    Oracle(Arc<ToyPipeline>),
}

impl Quality {
    pub fn mode(&self) -> QualityMode {
        match self {
            Quality::Surrogate(_) => QualityMode::Surrogate,
            Quality::Oracle(_) => QualityMode::Oracle,
        }
    }
}

/// Affine observation scaling. `h` is taken in dB relative to the
/// fading-free gain over `h_span_db`; latency and energy over their budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    h_ref_db: f64,
    h_span_db: f64,
    d_scale: f64,
    e_scale: f64,
}

fn budget_scale(budget: f64, fallback: f64) -> f64 {
    if budget.is_finite() && budget > 0.0 {
        budget
    } else {
        fallback
    }
}

impl Normalizer {
    pub fn new(sys: &SystemParams, env: &EnvParams) -> Self {
        let defaults = SystemParams::default();
        Normalizer {
            h_ref_db: 10.0 * mean_gain(sys.dist, sys).log10(),
            h_span_db: env.h_span_db,
            d_scale: budget_scale(sys.d_max, defaults.d_max),
            e_scale: budget_scale(sys.e_max, defaults.e_max),
        }
    }

    pub fn observe(&self, s: &State) -> Obs {
        [
            (10.0 * s.h.log10() - self.h_ref_db) / self.h_span_db,
            s.d_prev / self.d_scale,
            s.e_prev / self.e_scale,
        ]
    }

    pub fn invert(&self, o: &Obs) -> State {
        State {
            h: 10f64.powf((o[0] * self.h_span_db + self.h_ref_db) / 10.0),
            d_prev: o[1] * self.d_scale,
            e_prev: o[2] * self.e_scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MegEnv {
    pub sys: SystemParams,
    pub params: EnvParams,
    pub compression: CompressionMode,
    pub quality: Quality,
    pub norm: Normalizer,
}

impl MegEnv {
    pub fn new(
        sys: SystemParams,
        params: EnvParams,
        compression: CompressionMode,
        quality: Quality,
    ) -> Self {
        let norm = Normalizer::new(&sys, &params);
        MegEnv {
            sys,
            params,
            compression,
            quality,
            norm,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State {
            h: sample_frame(rng, 0, &self.sys).h,
            d_prev: 0.0,
            e_prev: 0.0,
        }
    }

    pub fn observe(&self, s: &State) -> Obs {
        self.norm.observe(s)
    }

    /// Discounted-cost thresholds `eps_frac · budget / (1 - γ)`.
    pub fn thresholds(&self) -> [f64; 2] {
        let k = self.params.eps_frac / (1.0 - self.params.gamma);
        [k * self.sys.d_max, k * self.sys.e_max]
    }

    pub fn mse(&self, a: Action, rng: &mut Stream) -> Result<f64> {
        match &self.quality {
            Quality::Surrogate(t) => Ok(t.at(a.alpha, a.beta)),
            Quality::Oracle(p) => {
                let task = TaskSpec::new(rng.random());
                p.quality(&task, a.alpha, a.beta, self.compression, rng)
            }
        }
    }

    /// Serves the frame of `s` with action `a`, then draws the next gain.
    pub fn step(&self, s: &State, a: Action, rng: &mut Stream) -> Result<StepOutcome> {
        let b = breakdown(a.alpha, a.beta, s.h, self.compression, &self.sys)?;
        let costs = cost_vector(b.latency.total, b.energy.total, &self.sys);
        let mse = self.mse(a, rng)?;
        let next = State {
            h: sample_frame(rng, 0, &self.sys).h,
            d_prev: b.latency.total,
            e_prev: b.energy.total,
        };
        Ok(StepOutcome {
            reward: (-mse).max(self.params.reward_floor),
            costs,
            next,
            breakdown: b,
            mse,
        })
    }
}

/// Maps an observation to an action; stochastic policies draw from `rng`.
pub trait Actor {
    fn act(&self, obs: &Obs, rng: &mut Stream) -> Action;
}

impl<F: Fn(&Obs) -> Action> Actor for F {
    fn act(&self, obs: &Obs, _rng: &mut Stream) -> Action {
        self(obs)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub t: usize,
    pub h: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "R")]
    pub reward: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_mse: f64,
    pub mean_d: f64,
    pub mean_e: f64,
    pub mean_d_tr: f64,
    /// Server plus device computation latency.
    pub mean_d_comp: f64,
    pub viol_d_rate: f64,
    pub viol_e_rate: f64,
    pub mean_alpha: f64,
    pub mean_beta: f64,
}

/// Runs `n_steps` frames in episodes of `episode_len`, restarting as needed.
pub fn evaluate_policy<A: Actor + ?Sized>(
    env: &MegEnv,
    actor: &A,
    n_steps: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<TrajectoryRow>)> {
    if n_steps == 0 {
        return Err(Error::Empty("evaluation steps"));
    }
    let mut env_rng = rng::stream(seed, ids::EVAL);
    let mut act_rng = rng::substream(seed, ids::EVAL, 1);
    let mut rows = Vec::with_capacity(n_steps);
    let mut acc = [0.0f64; 10];
    let mut state = env.reset(&mut env_rng);
    for k in 0..n_steps {
        let t = k % env.params.episode_len;
        if t == 0 && k > 0 {
            state = env.reset(&mut env_rng);
        }
        let a = actor.act(&env.observe(&state), &mut act_rng);
        let out = env.step(&state, a, &mut env_rng)?;
        let lat = out.breakdown.latency;
        for (slot, v) in acc.iter_mut().zip([
            out.reward,
            out.mse,
            lat.total,
            out.breakdown.energy.total,
            lat.tr,
            lat.es + lat.ue,
            f64::from(u8::from(out.costs[0] > 0.0)),
            f64::from(u8::from(out.costs[1] > 0.0)),
            a.alpha,
            a.beta,
        ]) {
            *slot += v;
        }
        rows.push(TrajectoryRow {
            episode: k / env.params.episode_len,
            t,
            h: state.h,
            alpha: a.alpha,
            beta: a.beta,
            reward: out.reward,
            c1: out.costs[0],
            c2: out.costs[1],
            d: lat.total,
            e: out.breakdown.energy.total,
        });
        state = out.next;
    }
    let n = n_steps as f64;
    let m = acc.map(|v| v / n);
    Ok((
        EvalReport {
            steps: n_steps,
            mean_reward: m[0],
            mean_mse: m[1],
            mean_d: m[2],
            mean_e: m[3],
            mean_d_tr: m[4],
            mean_d_comp: m[5],
            viol_d_rate: m[6],
            viol_e_rate: m[7],
            mean_alpha: m[8],
            mean_beta: m[9],
        },
        rows,
    ))
}

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
