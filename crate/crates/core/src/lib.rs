//! Split ("mobile edge") generative inference: cost model, token-merged
//! feature transport, a desk-scale latent diffusion pipeline and
//! constrained policy optimization over (denoising steps, merge ratio).

pub mod baseline;
pub mod channel;
pub mod checkpoint;
pub mod costmodel;
pub mod cvpo;
pub mod env;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sysmodel;
pub mod tokenmerge;
pub mod toygen;

pub use costmodel::{CompressionMode, CostBreakdown};
pub use error::{Error, Result};
pub use sysmodel::{Config, DeskParams, EnvParams, SystemParams};
pub use tokenmerge::{LatentFeature, MergePlan};
