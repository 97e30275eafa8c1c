//! Downlink channel: pathloss, fading draws and Shannon rate.

use rand::distr::Open01;
use rand::Rng;

use crate::sysmodel::{FadingKind, SystemParams};

/// Channel gain for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    /// Linear power gain.
    pub h: f64,
    pub frame: u64,
}

pub fn pathloss_db(dist: f64, params: &SystemParams) -> f64 {
    params.pathloss_a + params.pathloss_b * dist.log10()
}

/// Mean (fading-free) linear gain at `dist`.
pub fn mean_gain(dist: f64, params: &SystemParams) -> f64 {
    10f64.powf(-pathloss_db(dist, params) / 10.0)
}

/// Draws the gain for `frame`. Rayleigh draws are clamped from below at
/// `floor_db` (pass `-inf` for the unclamped law).
pub fn sample_channel<R: Rng + ?Sized>(
    rng: &mut R,
    frame: u64,
    dist: f64,
    fading: FadingKind,
    floor_db: f64,
    params: &SystemParams,
) -> ChannelState {
    let g = match fading {
        FadingKind::None => 1.0,
        FadingKind::Rayleigh => {
            let u: f64 = rng.sample(Open01);
            (-u.ln()).max(10f64.powf(floor_db / 10.0))
        }
    };
    ChannelState {
        h: mean_gain(dist, params) * g,
        frame,
    }
}

/// Draws the gain using the fading settings stored in `params`.
pub fn sample_frame<R: Rng + ?Sized>(
    rng: &mut R,
    frame: u64,
    params: &SystemParams,
) -> ChannelState {
    sample_channel(
        rng,
        frame,
        params.dist,
        params.fading,
        params.fading_floor_db,
        params,
    )
}

/// Achievable downlink rate, bits per second.
pub fn achievable_rate(h: f64, params: &SystemParams) -> f64 {
    let snr = params.p0 * h / params.n0b0;
    params.b0 * snr.ln_1p() / std::f64::consts::LN_2
}
