//! Synthetic prompts: a seed determines a target image and the initial
//! diffusion noise.

use rand::Rng;

use crate::rng::{self, ids, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub prompt_seed: u64,
}

/// First prompt seed of the held-out evaluation range.
pub const HELDOUT_BASE: u64 = 1 << 40;

impl TaskSpec {
    pub fn new(prompt_seed: u64) -> Self {
        TaskSpec { prompt_seed }
    }

    pub fn heldout(index: u64) -> Self {
        TaskSpec::new(HELDOUT_BASE + index)
    }

    /// Stream for the initial latent draw of this prompt.
    pub fn noise_rng(&self) -> Stream {
        rng::stream(self.prompt_seed, ids::TASK_NOISE)
    }

    /// Row-major `side × side` image: one to three Gaussian bumps,
    /// clipped to `[0, 1]`.
    pub fn image(&self, side: usize) -> Vec<f64> {
        let mut r = rng::stream(self.prompt_seed, ids::TASK_IMAGE);
        let bumps = r.random_range(1..=3);
        let s = side as f64;
        let params: Vec<[f64; 4]> = (0..bumps)
            .map(|_| {
                [
                    r.random_range(0.0..s),
                    r.random_range(0.0..s),
                    r.random_range(0.8..2.5),
                    r.random_range(0.4..1.0),
                ]
            })
            .collect();
        let mut img = vec![0.0; side * side];
        for (i, px) in img.iter_mut().enumerate() {
            let (y, x) = ((i / side) as f64 + 0.5, (i % side) as f64 + 0.5);
            let v: f64 = params
                .iter()
                .map(|[cx, cy, w, a]| {
                    a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp()
                })
                .sum();
            *px = v.clamp(0.0, 1.0);
        }
        img
    }
}

/// Prompt-seed synthesis entry point.
pub fn synth_task(prompt_seed: u64, side: usize) -> (TaskSpec, Vec<f64>) {
    let t = TaskSpec::new(prompt_seed);
    let img = t.image(side);
    (t, img)
}
