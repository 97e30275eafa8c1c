//! End-to-end desk pipeline: generate at the edge, compress, transmit over
//! a noisy link, restore and decode at the device.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::noisenet::{make_distill_batch, standard_normal, NoiseNet, NoisePredictor};
use super::schedule::{ddim_apply, ddim_coeffs_between, NoiseSchedule};
use super::task::TaskSpec;
use super::teacher::LatentPrior;
use super::vae::{mse, DecodeSample, VaePair};
use crate::costmodel::{denoise_steps, CompressionMode};
use crate::error::Result;
use crate::nn::Adam;
use crate::rng::{self, ids};
use crate::sysmodel::DeskParams;
use crate::tokenmerge::{self, LatentFeature, MergePlan};

/// Training budgets for the two learned stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prior_tasks: usize,
    pub distill_steps: usize,
    pub distill_batch: usize,
    pub distill_lr: f64,
    pub pool_tasks: usize,
    pub finetune_steps: usize,
    pub finetune_batch: usize,
    pub finetune_lr: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prior_tasks: 512,
            distill_steps: 2000,
            distill_batch: 32,
            distill_lr: 1e-3,
            pool_tasks: 256,
            finetune_steps: 2000,
            finetune_batch: 32,
            finetune_lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyPipeline {
    pub desk: DeskParams,
    pub schedule: NoiseSchedule,
    pub prior: LatentPrior,
    pub net: NoiseNet,
    /// Decoder being fine-tuned.
    pub vae: VaePair,
    /// Frozen pretrained pair; defines reference images.
    pub frozen: VaePair,
}

/// Initial draw from the noised marginal at `τ = L_max`.
fn initial_latent<R: Rng + ?Sized>(
    prior: &LatentPrior,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let om = schedule.omega(schedule.l_max as f64);
    let xi = standard_normal(prior.dim(), rng);
    (0..prior.dim())
        .map(|d| om.sqrt() * prior.mean[d] + (om * prior.var[d] + 1.0 - om).sqrt() * xi[d])
        .collect()
}

/// `steps` DDIM updates between the student's window boundaries.
pub fn generate<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    prior: &LatentPrior,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut z = initial_latent(prior, schedule, rng);
    let w = schedule.windows(steps);
    for l in (1..=steps).rev() {
        let eps = predictor.predict(&z, w[l]);
        let (u, v) = ddim_coeffs_between(schedule.omega(w[l - 1]), schedule.omega(w[l]));
        z = ddim_apply(u, v, &z, &eps);
    }
    z
}

pub fn add_noise<R: Rng + ?Sized>(
    z: &LatentFeature,
    var: f64,
    rng: &mut R,
) -> Result<LatentFeature> {
    if var <= 0.0 {
        return Ok(z.clone());
    }
    let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let data = z
        .as_slice()
        .iter()
        .map(|v| v + normal.sample(rng))
        .collect();
    LatentFeature::new(z.channels(), data)
}

/// Compress, add channel noise of variance `noise_var` per entry, restore.
pub fn transmit<R: Rng + ?Sized>(
    z: &LatentFeature,
    beta: f64,
    mode: CompressionMode,
    bits: u32,
    noise_var: f64,
    rng: &mut R,
) -> Result<LatentFeature> {
    match mode {
        CompressionMode::Merge => {
            let plan = tokenmerge::plan_merge(z, beta, bits, rng)?;
            let sent = add_noise(&tokenmerge::apply_merge(z, &plan)?, noise_var, rng)?;
            tokenmerge::unmerge(&sent, &plan)
        }
        CompressionMode::Prune => {
            let kept = tokenmerge::prune_plan(z, beta)?;
            let sent = add_noise(&tokenmerge::apply_prune(z, &kept), noise_var, rng)?;
            tokenmerge::zero_pad(&sent, &kept, z.tokens())
        }
    }
}

impl ToyPipeline {
    /// Pretrained autoencoder, prior fitted on the training prompts and an
    /// untrained noise net.
    pub fn new(desk: &DeskParams, cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        desk.validate()?;
        let mut init = rng::stream(seed, ids::PRIOR_FIT);
        let vae = VaePair::new(desk, &mut init);
        let latents = (0..cfg.prior_tasks as u64)
            .map(|s| {
                vae.encode(&TaskSpec::new(s).image(desk.image_side))
                    .map(LatentFeature::into_vec)
            })
            .collect::<Result<Vec<_>>>()?;
        let prior = LatentPrior::fit(&latents);
        let schedule = NoiseSchedule::new(desk.l_max, desk.sigma2_max);
        let net = NoiseNet::new(
            desk.latent_dim(),
            desk.l_max,
            &mut rng::stream(seed, ids::DISTILL),
        );
        Ok(ToyPipeline {
            desk: desk.clone(),
            schedule,
            prior,
            net,
            frozen: vae.clone(),
            vae,
        })
    }

    /// Builds and trains both stages; returns the per-step loss traces.
    pub fn train(
        desk: &DeskParams,
        cfg: &PipelineConfig,
        seed: u64,
    ) -> Result<(Self, Vec<f64>, Vec<f64>)> {
        let mut p = ToyPipeline::new(desk, cfg, seed)?;
        let d = p.distill(cfg, seed)?;
        let f = p.finetune(cfg, seed)?;
        Ok((p, d, f))
    }

    pub fn distill(&mut self, cfg: &PipelineConfig, seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::substream(seed, ids::DISTILL, 1);
        let mut opt = Adam::new(self.net.mlp.params.len(), cfg.distill_lr);
        (0..cfg.distill_steps)
            .map(|_| {
                let batch =
                    make_distill_batch(&self.prior, &self.schedule, cfg.distill_batch, &mut r);
                self.net.distill_step(&mut opt, &batch)
            })
            .collect()
    }

    pub fn generate_steps<R: Rng + ?Sized>(
        &self,
        steps: usize,
        rng: &mut R,
    ) -> Result<LatentFeature> {
        let z = generate(&self.net, &self.prior, &self.schedule, steps, rng);
        LatentFeature::new(self.desk.d_c, z)
    }

    /// `Z^E = F^E(α, X)`: `round(α L_max)` student steps from the prompt's
    /// own noise stream.
    pub fn es_generate(&self, alpha: f64, task: &TaskSpec) -> Result<LatentFeature> {
        let steps = denoise_steps(alpha, self.desk.l_max)?;
        self.generate_steps(steps, &mut task.noise_rng())
    }

    /// Full-quality, noiseless latent and its frozen decode.
    pub fn reference(&self, task: &TaskSpec) -> Result<(LatentFeature, Vec<f64>)> {
        let z = self.generate_steps(self.desk.l_max, &mut task.noise_rng())?;
        let img = self.frozen.decode(&z)?;
        Ok((z, img))
    }

    /// Device side for a merged transmission: unmerge, decode, score.
    pub fn decode_and_score(
        &self,
        z_received: &LatentFeature,
        plan: &MergePlan,
        reference: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        let full = tokenmerge::unmerge(z_received, plan)?;
        let img = self.vae.decode(&full)?;
        let err = mse(&img, reference);
        Ok((img, err))
    }

    /// One draw of the quality function for a prompt with a known
    /// reference image.
    #[allow(clippy::too_many_arguments)]
    pub fn quality_sample<R: Rng + ?Sized>(
        &self,
        latent: &LatentFeature,
        reference: &[f64],
        beta: f64,
        mode: CompressionMode,
        noise_var: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let restored = transmit(latent, beta, mode, self.desk.bits, noise_var, rng)?;
        Ok(mse(&self.vae.decode(&restored)?, reference))
    }

    /// Fresh draw of the quality function for `(α, β)` on `task`.
    pub fn quality<R: Rng + ?Sized>(
        &self,
        task: &TaskSpec,
        alpha: f64,
        beta: f64,
        mode: CompressionMode,
        rng: &mut R,
    ) -> Result<f64> {
        let (_, reference) = self.reference(task)?;
        let z = self.es_generate(alpha, task)?;
        self.quality_sample(&z, &reference, beta, mode, self.desk.noise_var(), rng)
    }

    /// Decoder fine-tuning on merged, noisy latents of the training pool
    /// against their reference images.
    pub fn finetune(&mut self, cfg: &PipelineConfig, seed: u64) -> Result<Vec<f64>> {
        let l_max = self.desk.l_max;
        // pool[k][L-1] = latent after L steps; refs[k] = reference image
        let mut pool = Vec::with_capacity(cfg.pool_tasks);
        let mut refs = Vec::with_capacity(cfg.pool_tasks);
        for k in 0..cfg.pool_tasks as u64 {
            let task = TaskSpec::new(k);
            let per_l = (1..=l_max)
                .map(|l| self.generate_steps(l, &mut task.noise_rng()))
                .collect::<Result<Vec<_>>>()?;
            refs.push(self.frozen.decode(&per_l[l_max - 1])?);
            pool.push(per_l);
        }
        let var = self.desk.noise_var();
        let mut r = rng::stream(seed, ids::FINETUNE);
        let mut opt = Adam::new(self.vae.decoder.params.len(), cfg.finetune_lr);
        let mut losses = Vec::with_capacity(cfg.finetune_steps);
        for _ in 0..cfg.finetune_steps {
            let batch = (0..cfg.finetune_batch)
                .map(|_| {
                    let k = r.random_range(0..pool.len());
                    let l = r.random_range(1..=l_max);
                    let beta = r.random::<f64>();
                    let restored = transmit(
                        &pool[k][l - 1],
                        beta,
                        CompressionMode::Merge,
                        self.desk.bits,
                        var,
                        &mut r,
                    )?;
                    Ok(DecodeSample {
                        latent: restored.into_vec(),
                        target: refs[k].clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            losses.push(self.vae.finetune_step(&mut opt, &batch)?);
        }
        Ok(losses)
    }

    /// Mean held-out mse of `vae` at fixed `(steps, β)` with channel noise,
    /// using the same prompts and noise draws for any decoder.
    pub fn heldout_mse(
        &self,
        vae: &VaePair,
        n: usize,
        steps: usize,
        beta: f64,
        seed: u64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..n as u64 {
            let task = TaskSpec::heldout(k);
            let (_, reference) = self.reference(&task)?;
            let z = self.generate_steps(steps, &mut task.noise_rng())?;
            let mut r = rng::substream(seed, ids::EVAL, k);
            let restored = transmit(
                &z,
                beta,
                CompressionMode::Merge,
                self.desk.bits,
                self.desk.noise_var(),
                &mut r,
            )?;
            total += mse(&vae.decode(&restored)?, &reference);
        }
        Ok(total / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toygen::noisenet::AnalyticTeacher;

    fn small() -> PipelineConfig {
        PipelineConfig {
            prior_tasks: 64,
            distill_steps: 20,
            pool_tasks: 8,
            finetune_steps: 20,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_draw() {
        let p = ToyPipeline::new(&DeskParams::default(), &small(), 1).unwrap();
        let task = TaskSpec::new(3);
        let z = p.es_generate(0.0, &task).unwrap();
        let init = initial_latent(&p.prior, &p.schedule, &mut task.noise_rng());
        assert_eq!(z.as_slice(), &init[..]);
        assert_eq!(
            p.es_generate(0.7, &task).unwrap(),
            p.es_generate(0.7, &task).unwrap()
        );
    }

    #[test]
    fn teacher_sampler_reaches_prior_mean() {
        let p = ToyPipeline::new(&DeskParams::default(), &small(), 2).unwrap();
        let teacher = AnalyticTeacher {
            prior: p.prior.clone(),
            schedule: p.schedule,
        };
        let mut r = rng::stream(2, 99);
        let n = 1000;
        let mut mean = vec![0.0; p.prior.dim()];
        for _ in 0..n {
            let z = generate(&teacher, &p.prior, &p.schedule, 12, &mut r);
            mean.iter_mut()
                .zip(&z)
                .for_each(|(m, v)| *m += v / n as f64);
        }
        let norm = p.prior.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = mean
            .iter()
            .zip(&p.prior.mean)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 0.05 * norm, "{err} vs {norm}");
    }

    #[test]
    fn unmerged_noiseless_reference_scores_zero() {
        let p = ToyPipeline::new(&DeskParams::default(), &small(), 3).unwrap();
        let (z, img) = p.reference(&TaskSpec::new(9)).unwrap();
        let plan = MergePlan::identity(z.tokens());
        let (_, e) = p.decode_and_score(&z, &plan, &img).unwrap();
        assert_eq!(e, 0.0);
        let mut r = rng::stream(3, 0);
        let noisy = add_noise(&z, p.desk.noise_var(), &mut r).unwrap();
        assert!(p.decode_and_score(&noisy, &plan, &img).unwrap().1 > 0.0);
        let short = LatentFeature::zeros(4, 3);
        assert!(p.decode_and_score(&short, &plan, &img).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let desk = DeskParams::default();
        let (_, a, b) = ToyPipeline::train(&desk, &small(), 4).unwrap();
        let (_, c, d) = ToyPipeline::train(&desk, &small(), 4).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, d);
    }
}
