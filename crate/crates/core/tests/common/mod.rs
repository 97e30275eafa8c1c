use std::sync::Arc;

use megsim::env::{MegEnv, Quality};
use megsim::toygen::surrogate::unit_grid;
use megsim::toygen::QualityTable;
use megsim::{CompressionMode, EnvParams, SystemParams};

/// Surrogate with an exact optimum at `(1, 0)`.
pub fn synthetic_env(d_max: f64) -> MegEnv {
    let g = unit_grid(5);
    let mut mean = Vec::new();
    for &a in &g {
        for &b in &g {
            mean.push(0.05 + 0.1 * (1.0 - a) + 0.08 * b);
        }
    }
    let n = mean.len();
    let table = QualityTable {
        alphas: g.clone(),
        betas: g,
        mean,
        std_err: vec![0.0; n],
        n: vec![1; n],
    };
    let sys = SystemParams {
        d_max,
        e_max: f64::INFINITY,
        ..SystemParams::default()
    };
    MegEnv::new(
        sys,
        EnvParams::default(),
        CompressionMode::Merge,
        Quality::Surrogate(Arc::new(table)),
    )
}
