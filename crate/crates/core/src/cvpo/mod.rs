//! Constrained variational policy optimization: critics, an E-step over
//! action particles with a convex dual, and a KL-regularized M-step.

pub mod buffer;
pub mod critic;
pub mod estep;
pub mod mstep;
pub mod policy;
pub mod train;

pub use buffer::{ReplayBuffer, Transition};
pub use critic::{Critic, CriticSet};
pub use estep::{DualVars, EStepConfig, ParticleValues};
pub use mstep::{MStepBatch, MStepConfig};
pub use policy::{GaussianPolicy, MeanActor, SampleActor};
pub use train::{train, CvpoConfig, CvpoOutcome, TrainLogRow};
