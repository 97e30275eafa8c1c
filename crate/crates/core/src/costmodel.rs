//! End-to-end latency and energy of one split-generation task.
//!
//! Server: encoder plus `L` U-Net passes. Device: decoder. Link: the
//! (possibly merged) latent plus the merge map over the downlink rate.
//! Energy is reported in hJ; transmit energy is `P0 · D_TR / 100`.

use std::io::Write;

use serde::Serialize;

use crate::channel::achievable_rate;
use crate::error::{check_unit, Result};
use crate::sysmodel::SystemParams;

/// How the server shortens the transmitted feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompressionMode {
    /// Token merging; the receiver needs the merge map (`b` bits per merge).
    Merge,
    /// Importance pruning with zero padding; no side information.
    Prune,
}

impl std::str::FromStr for CompressionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merge" => Ok(CompressionMode::Merge),
            "prune" => Ok(CompressionMode::Prune),
            other => Err(crate::Error::invalid(
                "mode",
                format!("expected merge|prune, got `{other}`"),
            )),
        }
    }
}

/// `⌊x⌉` with halves rounded up.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub fn denoise_steps(alpha: f64, l_max: usize) -> Result<usize> {
    check_unit("alpha", alpha)?;
    Ok(round_half_up(alpha * l_max as f64))
}

/// Tokens kept after compression, never fewer than one.
pub fn kept_tokens(beta: f64, j_max: usize) -> Result<usize> {
    check_unit("beta", beta)?;
    let removed = round_half_up(beta * j_max as f64);
    Ok(j_max.saturating_sub(removed).max(1))
}

/// Bits on the wire: feature values plus the merge side information.
pub fn payload_bits(beta: f64, mode: CompressionMode, params: &SystemParams) -> Result<u64> {
    let j_max = params.j_max();
    let kept = kept_tokens(beta, j_max)?;
    let b = params.bits as u64;
    let aux = match mode {
        CompressionMode::Merge => b * (j_max - kept) as u64,
        CompressionMode::Prune => 0,
    };
    Ok(b * params.d_c as u64 * kept as u64 + aux)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub es: f64,
    pub ue: f64,
    pub tr: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub es: f64,
    pub ue: f64,
    pub tr: f64,
    pub total: f64,
}

/// Full per-task cost record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub steps: usize,
    pub kept: usize,
    pub payload_bits: u64,
    pub latency: Latency,
    pub energy: Energy,
}

fn server_tflops(steps: usize, params: &SystemParams) -> f64 {
    params.o_e + steps as f64 * params.o_unet * params.compute_merge_factor
}

pub fn latency(
    alpha: f64,
    beta: f64,
    h: f64,
    mode: CompressionMode,
    params: &SystemParams,
) -> Result<Latency> {
    let steps = denoise_steps(alpha, params.l_max)?;
    let bits = payload_bits(beta, mode, params)?;
    let es = server_tflops(steps, params) * params.t_es;
    let ue = params.o_d * params.t_ue;
    let tr = bits as f64 / achievable_rate(h, params);
    Ok(Latency {
        es,
        ue,
        tr,
        total: es + ue + tr + params.d0,
    })
}

pub fn energy(
    alpha: f64,
    beta: f64,
    h: f64,
    mode: CompressionMode,
    params: &SystemParams,
) -> Result<Energy> {
    let steps = denoise_steps(alpha, params.l_max)?;
    let bits = payload_bits(beta, mode, params)?;
    let es = server_tflops(steps, params) * params.e_es;
    let ue = params.o_d * params.e_ue;
    let tr = params.p0 * (bits as f64 / achievable_rate(h, params)) / 100.0;
    Ok(Energy {
        es,
        ue,
        tr,
        total: es + ue + tr + params.e0,
    })
}

pub fn breakdown(
    alpha: f64,
    beta: f64,
    h: f64,
    mode: CompressionMode,
    params: &SystemParams,
) -> Result<CostBreakdown> {
    Ok(CostBreakdown {
        steps: denoise_steps(alpha, params.l_max)?,
        kept: kept_tokens(beta, params.j_max())?,
        payload_bits: payload_bits(beta, mode, params)?,
        latency: latency(alpha, beta, h, mode, params)?,
        energy: energy(alpha, beta, h, mode, params)?,
    })
}

/// Constraint-violation costs `([D - D_max]^+, [E - E_max]^+)`.
pub fn cost_vector(d_total: f64, e_total: f64, params: &SystemParams) -> [f64; 2] {
    [
        (d_total - params.d_max).max(0.0),
        (e_total - params.e_max).max(0.0),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownRow {
    pub t: u64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "L")]
    pub steps: usize,
    #[serde(rename = "J_t")]
    pub kept: usize,
    #[serde(rename = "D_ES")]
    pub d_es: f64,
    #[serde(rename = "D_UE")]
    pub d_ue: f64,
    #[serde(rename = "D_TR")]
    pub d_tr: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "E_ES")]
    pub e_es: f64,
    #[serde(rename = "E_UE")]
    pub e_ue: f64,
    #[serde(rename = "E_TR")]
    pub e_tr: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
}

impl BreakdownRow {
    pub fn new(t: u64, alpha: f64, beta: f64, b: &CostBreakdown, params: &SystemParams) -> Self {
        let [c1, c2] = cost_vector(b.latency.total, b.energy.total, params);
        BreakdownRow {
            t,
            alpha,
            beta,
            steps: b.steps,
            kept: b.kept,
            d_es: b.latency.es,
            d_ue: b.latency.ue,
            d_tr: b.latency.tr,
            d: b.latency.total,
            e_es: b.energy.es,
            e_ue: b.energy.ue,
            e_tr: b.energy.tr,
            e: b.energy.total,
            c1,
            c2,
        }
    }
}

pub fn write_breakdowns_csv<W: Write>(out: W, rows: &[BreakdownRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}
