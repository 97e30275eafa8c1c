//! PPO-Lagrangian comparison solver with PID-controlled multipliers.

pub mod pid;
pub mod ppo;

pub use pid::{PidGains, PidState};
pub use ppo::{train, PpoConfig, PpoOutcome};
