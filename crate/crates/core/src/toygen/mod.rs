//! Desk-scale latent generation: synthetic prompts, a linear patch
//! autoencoder, a distilled few-step denoiser and the quality metric.

pub mod noisenet;
pub mod pipeline;
pub mod schedule;
pub mod surrogate;
pub mod task;
pub mod teacher;
pub mod vae;

pub use noisenet::{AnalyticTeacher, DistillSample, NoiseNet, NoisePredictor};
pub use pipeline::{PipelineConfig, ToyPipeline};
pub use schedule::NoiseSchedule;
pub use surrogate::{build_surrogate, QualityTable};
pub use task::{synth_task, TaskSpec};
pub use teacher::LatentPrior;
pub use vae::VaePair;
