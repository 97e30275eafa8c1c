//! Resolved run settings: the model configuration plus solver knobs, all
//! expressed as one flat `key = value` document.

use std::str::FromStr;

use megsim::baseline::{PidGains, PpoConfig};
use megsim::cvpo::CvpoConfig;
use megsim::toygen::PipelineConfig;
use megsim::{Config, Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub model: Config,
    pub pipeline: PipelineConfig,
    pub cvpo: CvpoConfig,
    pub ppo: PpoConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Invalid {
        key: key.to_string(),
        reason: format!("cannot parse `{v}`"),
    })
}

impl Settings {
    /// Applies documents in order; later keys win.
    pub fn from_docs(docs: &[&str]) -> Result<Self> {
        let mut s = Settings::default();
        let mut model_doc = String::new();
        for doc in docs {
            for line in doc.lines() {
                let body = line.split('#').next().unwrap_or("");
                for item in body.split(',') {
                    let item = item.trim();
                    if item.is_empty() {
                        continue;
                    }
                    let Some((k, v)) = item.split_once('=') else {
                        return Err(Error::Parse {
                            line: 0,
                            msg: format!("expected `key = value`, got `{item}`"),
                        });
                    };
                    let (k, v) = (k.trim(), v.trim());
                    if !s.set_solver(k, v)? {
                        model_doc.push_str(&format!("{k} = {v}\n"));
                    }
                }
            }
        }
        s.model = Config::from_doc(&model_doc)?;
        Ok(s)
    }

    fn set_solver(&mut self, key: &str, v: &str) -> Result<bool> {
        let p = &mut self.pipeline;
        let c = &mut self.cvpo;
        let o = &mut self.ppo;
        match key {
            "pipeline.prior_tasks" => p.prior_tasks = parse(key, v)?,
            "pipeline.distill_steps" => p.distill_steps = parse(key, v)?,
            "pipeline.distill_batch" => p.distill_batch = parse(key, v)?,
            "pipeline.distill_lr" => p.distill_lr = parse(key, v)?,
            "pipeline.pool_tasks" => p.pool_tasks = parse(key, v)?,
            "pipeline.finetune_steps" => p.finetune_steps = parse(key, v)?,
            "pipeline.finetune_batch" => p.finetune_batch = parse(key, v)?,
            "pipeline.finetune_lr" => p.finetune_lr = parse(key, v)?,
            "cvpo.iterations" => c.iterations = parse(key, v)?,
            "cvpo.steps_per_iter" => c.steps_per_iter = parse(key, v)?,
            "cvpo.batch_states" => c.batch_states = parse(key, v)?,
            "cvpo.particles" => c.particles = parse(key, v)?,
            "cvpo.critic_steps" => c.critic_steps = parse(key, v)?,
            "cvpo.critic_batch" => c.critic_batch = parse(key, v)?,
            "cvpo.critic_lr" => c.critic_lr = parse(key, v)?,
            "cvpo.polyak" => c.polyak = parse(key, v)?,
            "cvpo.buffer" => c.buffer = parse(key, v)?,
            "cvpo.reward_window" => c.reward_window = parse(key, v)?,
            "cvpo.eps0" => c.estep.eps0 = parse(key, v)?,
            "cvpo.estep_iters" => c.estep.iters = parse(key, v)?,
            "cvpo.kl_bound" => c.mstep.kl_bound = parse(key, v)?,
            "cvpo.mstep_iters" => c.mstep.iters = parse(key, v)?,
            "cvpo.mstep_lr" => c.mstep.lr = parse(key, v)?,
            "ppo.iterations" => o.iterations = parse(key, v)?,
            "ppo.steps_per_iter" => o.steps_per_iter = parse(key, v)?,
            "ppo.epochs" => o.epochs = parse(key, v)?,
            "ppo.minibatch" => o.minibatch = parse(key, v)?,
            "ppo.clip" => o.clip = parse(key, v)?,
            "ppo.gae_lambda" => o.gae_lambda = parse(key, v)?,
            "ppo.policy_lr" => o.policy_lr = parse(key, v)?,
            "ppo.value_lr" => o.value_lr = parse(key, v)?,
            "ppo.normalize_adv" => o.normalize_adv = parse(key, v)?,
            "ppo.lagrangian" => {
                let on: bool = parse(key, v)?;
                o.pid = match (on, o.pid) {
                    (true, None) => Some(PidGains::default()),
                    (true, g) => g,
                    (false, _) => None,
                }
            }
            "ppo.kp" | "ppo.ki" | "ppo.kd" => {
                let g = o.pid.get_or_insert(PidGains::default());
                let x = parse(key, v)?;
                match key {
                    "ppo.kp" => g.kp = x,
                    "ppo.ki" => g.ki = x,
                    _ => g.kd = x,
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical document: sorted model keys, then solver keys.
    pub fn to_doc(&self) -> String {
        let p = &self.pipeline;
        let c = &self.cvpo;
        let o = &self.ppo;
        let mut out = self.model.to_doc();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("pipeline.prior_tasks", p.prior_tasks.to_string());
        put("pipeline.distill_steps", p.distill_steps.to_string());
        put("pipeline.distill_batch", p.distill_batch.to_string());
        put("pipeline.distill_lr", p.distill_lr.to_string());
        put("pipeline.pool_tasks", p.pool_tasks.to_string());
        put("pipeline.finetune_steps", p.finetune_steps.to_string());
        put("pipeline.finetune_batch", p.finetune_batch.to_string());
        put("pipeline.finetune_lr", p.finetune_lr.to_string());
        put("cvpo.iterations", c.iterations.to_string());
        put("cvpo.steps_per_iter", c.steps_per_iter.to_string());
        put("cvpo.batch_states", c.batch_states.to_string());
        put("cvpo.particles", c.particles.to_string());
        put("cvpo.critic_steps", c.critic_steps.to_string());
        put("cvpo.critic_batch", c.critic_batch.to_string());
        put("cvpo.critic_lr", c.critic_lr.to_string());
        put("cvpo.polyak", c.polyak.to_string());
        put("cvpo.buffer", c.buffer.to_string());
        put("cvpo.reward_window", c.reward_window.to_string());
        put("cvpo.eps0", c.estep.eps0.to_string());
        put("cvpo.estep_iters", c.estep.iters.to_string());
        put("cvpo.kl_bound", c.mstep.kl_bound.to_string());
        put("cvpo.mstep_iters", c.mstep.iters.to_string());
        put("cvpo.mstep_lr", c.mstep.lr.to_string());
        put("ppo.iterations", o.iterations.to_string());
        put("ppo.steps_per_iter", o.steps_per_iter.to_string());
        put("ppo.epochs", o.epochs.to_string());
        put("ppo.minibatch", o.minibatch.to_string());
        put("ppo.clip", o.clip.to_string());
        put("ppo.gae_lambda", o.gae_lambda.to_string());
        put("ppo.policy_lr", o.policy_lr.to_string());
        put("ppo.value_lr", o.value_lr.to_string());
        put("ppo.normalize_adv", o.normalize_adv.to_string());
        put("ppo.lagrangian", o.pid.is_some().to_string());
        if let Some(g) = o.pid {
            put("ppo.kp", g.kp.to_string());
            put("ppo.ki", g.ki.to_string());
            put("ppo.kd", g.kd.to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trips() {
        let s = Settings::from_docs(&[
            "D_max = 5, cvpo.iterations = 7",
            "ppo.lagrangian = false\ndesk.L_max = 6",
        ])
        .unwrap();
        assert_eq!(s.model.system.d_max, 5.0);
        assert_eq!(s.model.desk.l_max, 6);
        assert_eq!(s.cvpo.iterations, 7);
        assert_eq!(s.ppo.pid, None);
        let back = Settings::from_docs(&[&s.to_doc()]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn later_documents_win() {
        let s = Settings::from_docs(&["cvpo.iterations = 7", "cvpo.iterations = 9"]).unwrap();
        assert_eq!(s.cvpo.iterations, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Settings::from_docs(&["cvpo.bogus = 1"]).is_err());
    }

    #[test]
    fn infinite_budget_survives_rendering() {
        let s = Settings::from_docs(&["D_max = inf"]).unwrap();
        assert!(Settings::from_docs(&[&s.to_doc()])
            .unwrap()
            .model
            .system
            .d_max
            .is_infinite());
    }
}
