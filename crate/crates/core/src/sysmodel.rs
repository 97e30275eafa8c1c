//! System constants and shared configuration.
//!
//! Configuration documents are plain `key = value` text. Entries may be
//! separated by newlines or commas, `#` starts a comment. Unprefixed keys
//! configure [`SystemParams`]; `desk.*` keys configure [`DeskParams`] and
//! `env.*` keys configure [`EnvParams`]. Serialization writes keys in
//! alphabetical order so equal configs produce identical text.
//!
//! Units: seconds, watts, hertz, hectojoules (hJ = 100 J), TFLOPs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Small-scale fading law applied to the pathloss gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingKind {
    None,
    /// Exponential power gain with unit mean.
    Rayleigh,
}

impl FromStr for FadingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FadingKind::None),
            "rayleigh" => Ok(FadingKind::Rayleigh),
            other => Err(Error::invalid(
                "fading",
                format!("expected none|rayleigh, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for FadingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FadingKind::None => "none",
            FadingKind::Rayleigh => "rayleigh",
        })
    }
}

/// Paper-scale system model constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Downlink transmit power (W).
    pub p0: f64,
    /// Bandwidth (Hz).
    pub b0: f64,
    /// Noise power over the whole band (W).
    pub n0b0: f64,
    /// Bits per transmitted floating point number.
    pub bits: u32,
    pub d_c: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub l_max: usize,
    /// Encoder FLOPs (TFLOPs).
    pub o_e: f64,
    /// FLOPs of one U-Net denoising pass (TFLOPs).
    pub o_unet: f64,
    /// Decoder FLOPs (TFLOPs).
    pub o_d: f64,
    /// Server seconds per TFLOP.
    pub t_es: f64,
    /// Device seconds per TFLOP.
    pub t_ue: f64,
    /// Server hJ per TFLOP.
    pub e_es: f64,
    /// Device hJ per TFLOP.
    pub e_ue: f64,
    /// Fixed access latency (s), added once per task.
    pub d0: f64,
    /// Fixed access energy (hJ), added once per task.
    pub e0: f64,
    /// Per-frame latency budget (s). May be 0 or infinite.
    pub d_max: f64,
    /// Per-frame energy budget (hJ). May be 0 or infinite.
    pub e_max: f64,
    /// Multiplier on U-Net FLOPs modelling in-attention token merging.
    pub compute_merge_factor: f64,
    pub pathloss_a: f64,
    pub pathloss_b: f64,
    /// Device distance (m).
    pub dist: f64,
    pub fading: FadingKind,
    /// Lower clamp on the fading power gain, dB. `-inf` disables it.
    pub fading_floor_db: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        let t_es = 0.0274;
        let e_es = 0.0774;
        SystemParams {
            p0: 1.0,
            b0: 1.0e6,
            n0b0: 10f64.powf(-9.4 - 3.0),
            bits: 16,
            d_c: 16,
            d_w: 64,
            d_h: 64,
            l_max: 12,
            o_e: 0.2200,
            o_unet: 11.2482,
            o_d: 10.2310,
            t_es,
            t_ue: 2.0 * t_es,
            e_es,
            e_ue: e_es / 0.8,
            d0: 0.4641e-3,
            e0: 0.7320,
            d_max: 5.0,
            e_max: 18.0,
            compute_merge_factor: 0.5,
            pathloss_a: 35.3,
            pathloss_b: 37.6,
            dist: 300.0,
            fading: FadingKind::Rayleigh,
            fading_floor_db: -10.0,
        }
    }
}

/// Toy-scale analogues used by the generation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskParams {
    pub d_c: usize,
    pub d_w: usize,
    pub d_h: usize,
    pub l_max: usize,
    /// Side of the square image; image dimension is `image_side²`.
    pub image_side: usize,
    /// Final diffusion variance `σ²_diff(L_max)`; the schedule is linear.
    pub sigma2_max: f64,
    /// Scale applied by the encoder; latent variance grows as its square.
    pub latent_gain: f64,
    /// Channel noise level for decoding, `10 log10(peak / σ²)`.
    pub psnr_db: f64,
    pub peak_power: f64,
    pub bits: u32,
}

impl Default for DeskParams {
    fn default() -> Self {
        DeskParams {
            d_c: 4,
            d_w: 4,
            d_h: 4,
            l_max: 12,
            image_side: 8,
            sigma2_max: 0.98,
            latent_gain: 1.0,
            psnr_db: 10.0,
            peak_power: 1.0,
            bits: 16,
        }
    }
}

/// Constrained MDP settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub episode_len: usize,
    pub gamma: f64,
    /// Discounted-cost thresholds are `eps_frac · budget / (1 - gamma)`.
    pub eps_frac: f64,
    /// Lower clip on the reward `-mse`.
    pub reward_floor: f64,
    /// Half-width (dB) of the channel-gain normalization window.
    pub h_span_db: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            episode_len: 64,
            gamma: 0.95,
            eps_frac: 0.05,
            reward_floor: -10.0,
            h_span_db: 10.0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::invalid(key, format!("cannot parse `{value}`")))
}

fn require(key: &str, ok: bool, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(key, reason))
    }
}

/// A group of config keys with a common prefix.
trait KeyGroup: Default {
    const PREFIX: &'static str;
    /// Returns `Ok(false)` for an unrecognized key.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
    fn entries(&self) -> Vec<(&'static str, String)>;
    fn validate(&self) -> Result<()>;
}

impl KeyGroup for SystemParams {
    const PREFIX: &'static str = "";

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "P0" => self.p0 = parse_num(key, v)?,
            "B0" => self.b0 = parse_num(key, v)?,
            "N0B0" => self.n0b0 = parse_num(key, v)?,
            "b" => self.bits = parse_num(key, v)?,
            "d_C" => self.d_c = parse_num(key, v)?,
            "d_W" => self.d_w = parse_num(key, v)?,
            "d_H" => self.d_h = parse_num(key, v)?,
            "L_max" => self.l_max = parse_num(key, v)?,
            "O_E" => self.o_e = parse_num(key, v)?,
            "O_UNet" => self.o_unet = parse_num(key, v)?,
            "O_D" => self.o_d = parse_num(key, v)?,
            "t_ES" => self.t_es = parse_num(key, v)?,
            "t_UE" => self.t_ue = parse_num(key, v)?,
            "e_ES" => self.e_es = parse_num(key, v)?,
            "e_UE" => self.e_ue = parse_num(key, v)?,
            "D0" => self.d0 = parse_num(key, v)?,
            "E0" => self.e0 = parse_num(key, v)?,
            "D_max" => self.d_max = parse_num(key, v)?,
            "E_max" => self.e_max = parse_num(key, v)?,
            "compute_merge_factor" => self.compute_merge_factor = parse_num(key, v)?,
            "pathloss_a" => self.pathloss_a = parse_num(key, v)?,
            "pathloss_b" => self.pathloss_b = parse_num(key, v)?,
            "dist" => self.dist = parse_num(key, v)?,
            "fading" => self.fading = v.parse()?,
            "fading_floor_db" => self.fading_floor_db = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("P0", self.p0.to_string()),
            ("B0", self.b0.to_string()),
            ("N0B0", self.n0b0.to_string()),
            ("b", self.bits.to_string()),
            ("d_C", self.d_c.to_string()),
            ("d_W", self.d_w.to_string()),
            ("d_H", self.d_h.to_string()),
            ("L_max", self.l_max.to_string()),
            ("O_E", self.o_e.to_string()),
            ("O_UNet", self.o_unet.to_string()),
            ("O_D", self.o_d.to_string()),
            ("t_ES", self.t_es.to_string()),
            ("t_UE", self.t_ue.to_string()),
            ("e_ES", self.e_es.to_string()),
            ("e_UE", self.e_ue.to_string()),
            ("D0", self.d0.to_string()),
            ("E0", self.e0.to_string()),
            ("D_max", self.d_max.to_string()),
            ("E_max", self.e_max.to_string()),
            (
                "compute_merge_factor",
                self.compute_merge_factor.to_string(),
            ),
            ("pathloss_a", self.pathloss_a.to_string()),
            ("pathloss_b", self.pathloss_b.to_string()),
            ("dist", self.dist.to_string()),
            ("fading", self.fading.to_string()),
            ("fading_floor_db", self.fading_floor_db.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("P0", self.p0),
            ("B0", self.b0),
            ("N0B0", self.n0b0),
            ("O_E", self.o_e),
            ("O_UNet", self.o_unet),
            ("O_D", self.o_d),
            ("t_ES", self.t_es),
            ("t_UE", self.t_ue),
            ("e_ES", self.e_es),
            ("e_UE", self.e_ue),
            ("dist", self.dist),
        ];
        for (key, value) in positive {
            require(
                key,
                value.is_finite() && value > 0.0,
                "must be finite and > 0",
            )?;
        }
        for (key, value) in [("D0", self.d0), ("E0", self.e0)] {
            require(
                key,
                value.is_finite() && value >= 0.0,
                "must be finite and >= 0",
            )?;
        }
        for (key, value) in [("D_max", self.d_max), ("E_max", self.e_max)] {
            require(key, value >= 0.0, "must be >= 0 (inf allowed)")?;
        }
        require("b", matches!(self.bits, 16 | 32), "must be 16 or 32")?;
        for (key, value) in [
            ("d_C", self.d_c),
            ("d_W", self.d_w),
            ("d_H", self.d_h),
            ("L_max", self.l_max),
        ] {
            require(key, value > 0, "must be > 0")?;
        }
        require(
            "compute_merge_factor",
            self.compute_merge_factor > 0.0 && self.compute_merge_factor <= 1.0,
            "must lie in (0, 1]",
        )?;
        require("pathloss_a", self.pathloss_a.is_finite(), "must be finite")?;
        require("pathloss_b", self.pathloss_b.is_finite(), "must be finite")?;
        require(
            "fading_floor_db",
            !self.fading_floor_db.is_nan() && self.fading_floor_db < f64::INFINITY,
            "must be < inf",
        )?;
        Ok(())
    }
}

impl KeyGroup for DeskParams {
    const PREFIX: &'static str = "desk.";

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "d_C" => self.d_c = parse_num(key, v)?,
            "d_W" => self.d_w = parse_num(key, v)?,
            "d_H" => self.d_h = parse_num(key, v)?,
            "L_max" => self.l_max = parse_num(key, v)?,
            "image_side" => self.image_side = parse_num(key, v)?,
            "sigma2_max" => self.sigma2_max = parse_num(key, v)?,
            "latent_gain" => self.latent_gain = parse_num(key, v)?,
            "psnr_db" => self.psnr_db = parse_num(key, v)?,
            "peak_power" => self.peak_power = parse_num(key, v)?,
            "b" => self.bits = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_C", self.d_c.to_string()),
            ("d_W", self.d_w.to_string()),
            ("d_H", self.d_h.to_string()),
            ("L_max", self.l_max.to_string()),
            ("image_side", self.image_side.to_string()),
            ("sigma2_max", self.sigma2_max.to_string()),
            ("latent_gain", self.latent_gain.to_string()),
            ("psnr_db", self.psnr_db.to_string()),
            ("peak_power", self.peak_power.to_string()),
            ("b", self.bits.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let p = "desk.";
        for (key, value) in [
            ("d_C", self.d_c),
            ("d_W", self.d_w),
            ("d_H", self.d_h),
            ("L_max", self.l_max),
        ] {
            require(&format!("{p}{key}"), value > 0, "must be > 0")?;
        }
        require(
            "desk.image_side",
            self.image_side > 0 && self.image_side % 2 == 0,
            "must be even and > 0",
        )?;
        require(
            "desk.image_side",
            (self.image_side / 2).pow(2) == self.j_max() && self.d_c == 4,
            "2x2 patch encoder needs d_C = 4 and (image_side/2)^2 = d_W*d_H",
        )?;
        require(
            "desk.sigma2_max",
            self.sigma2_max > 0.0 && self.sigma2_max < 1.0,
            "must lie in (0, 1)",
        )?;
        require(
            "desk.latent_gain",
            self.latent_gain.is_finite() && self.latent_gain > 0.0,
            "must be finite and > 0",
        )?;
        require("desk.psnr_db", self.psnr_db.is_finite(), "must be finite")?;
        require(
            "desk.peak_power",
            self.peak_power.is_finite() && self.peak_power > 0.0,
            "must be finite and > 0",
        )?;
        require("desk.b", matches!(self.bits, 16 | 32), "must be 16 or 32")?;
        Ok(())
    }
}

impl KeyGroup for EnvParams {
    const PREFIX: &'static str = "env.";

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "episode_len" => self.episode_len = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "eps_frac" => self.eps_frac = parse_num(key, v)?,
            "reward_floor" => self.reward_floor = parse_num(key, v)?,
            "h_span_db" => self.h_span_db = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("episode_len", self.episode_len.to_string()),
            ("gamma", self.gamma.to_string()),
            ("eps_frac", self.eps_frac.to_string()),
            ("reward_floor", self.reward_floor.to_string()),
            ("h_span_db", self.h_span_db.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        require("env.episode_len", self.episode_len > 0, "must be > 0")?;
        require(
            "env.gamma",
            (0.0..1.0).contains(&self.gamma),
            "must lie in [0, 1)",
        )?;
        require("env.eps_frac", self.eps_frac >= 0.0, "must be >= 0")?;
        require("env.reward_floor", self.reward_floor < 0.0, "must be < 0")?;
        require(
            "env.h_span_db",
            self.h_span_db.is_finite() && self.h_span_db > 0.0,
            "must be finite and > 0",
        )?;
        Ok(())
    }
}

impl SystemParams {
    /// Number of latent tokens, `d_W · d_H`.
    pub fn j_max(&self) -> usize {
        self.d_w * self.d_h
    }

    pub fn validate(&self) -> Result<()> {
        KeyGroup::validate(self)
    }

    pub fn to_doc(&self) -> String {
        render(&[(SystemParams::PREFIX, self.entries())])
    }
}

impl DeskParams {
    pub fn j_max(&self) -> usize {
        self.d_w * self.d_h
    }

    pub fn latent_dim(&self) -> usize {
        self.d_c * self.j_max()
    }

    pub fn image_dim(&self) -> usize {
        self.image_side * self.image_side
    }

    /// Channel noise variance in latent units.
    pub fn noise_var(&self) -> f64 {
        self.peak_power / 10f64.powf(self.psnr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        KeyGroup::validate(self)
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        KeyGroup::validate(self)
    }
}

/// Splits a document into `(line, key, value)` triples.
fn entries_of(doc: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in doc.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for item in line.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (key, value) = item.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `key = value`, got `{item}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("empty key or value in `{item}`"),
                });
            }
            out.push((idx + 1, key.to_string(), value.to_string()));
        }
    }
    Ok(out)
}

fn render(groups: &[(&str, Vec<(&'static str, String)>)]) -> String {
    let sorted: BTreeMap<String, &String> = groups
        .iter()
        .flat_map(|(prefix, entries)| {
            entries
                .iter()
                .map(move |(k, v)| (format!("{prefix}{k}"), v))
        })
        .collect();
    let mut out = String::new();
    for (k, v) in sorted {
        out.push_str(&k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Parses a system-parameter document. Absent keys keep their defaults.
pub fn load_params(doc: &str) -> Result<SystemParams> {
    let mut params = SystemParams::default();
    for (_, key, value) in entries_of(doc)? {
        if !params.set(&key, &value)? {
            return Err(Error::UnknownKey(key));
        }
    }
    KeyGroup::validate(&params)?;
    Ok(params)
}

/// Full run configuration: system, desk-scale and environment groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub system: SystemParams,
    pub desk: DeskParams,
    pub env: EnvParams,
}

impl Config {
    pub fn from_doc(doc: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (_, key, value) in entries_of(doc)? {
            let known = if let Some(rest) = key.strip_prefix(DeskParams::PREFIX) {
                cfg.desk.set(rest, &value)?
            } else if let Some(rest) = key.strip_prefix(EnvParams::PREFIX) {
                cfg.env.set(rest, &value)?
            } else {
                cfg.system.set(&key, &value)?
            };
            if !known {
                return Err(Error::UnknownKey(key));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.desk.validate()?;
        self.env.validate()
    }

    pub fn to_doc(&self) -> String {
        render(&[
            (SystemParams::PREFIX, self.system.entries()),
            (DeskParams::PREFIX, self.desk.entries()),
            (EnvParams::PREFIX, self.env.entries()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_doc_gives_defaults() {
        let p = load_params("").unwrap();
        assert_eq!(p, SystemParams::default());
        assert_eq!(p.j_max(), 4096);
        assert!((p.n0b0 - 3.981_071_705_534_97e-13).abs() < 1e-24);
        assert!((p.t_ue - 0.0548).abs() < 1e-15);
        assert!((p.e_ue - 0.09675).abs() < 1e-15);
        assert_eq!(p.d0, 0.0004641);
    }

    #[test]
    fn defaults_satisfy_invariants() {
        SystemParams::default().validate().unwrap();
        DeskParams::default().validate().unwrap();
        EnvParams::default().validate().unwrap();
        assert_eq!(DeskParams::default().j_max(), 16);
        assert_eq!(DeskParams::default().image_dim(), 64);
    }

    #[test]
    fn negative_bandwidth_is_rejected() {
        match load_params("B0 = -1") {
            Err(Error::Invalid { key, .. }) => assert_eq!(key, "B0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_keep_other_defaults() {
        let p = load_params("L_max = 12, b = 16").unwrap();
        assert_eq!(p, SystemParams::default());
        let p = load_params("L_max = 6\nb = 32 # wider floats").unwrap();
        assert_eq!(p.l_max, 6);
        assert_eq!(p.bits, 32);
        assert_eq!(p.b0, 1.0e6);
    }

    #[test]
    fn parse_and_key_errors() {
        assert!(matches!(
            load_params("bogus = 1"),
            Err(Error::UnknownKey(_))
        ));
        assert!(matches!(
            load_params("B0"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(load_params("b = 8"), Err(Error::Invalid { .. })));
        assert!(matches!(
            load_params("L_max = 1.5"),
            Err(Error::Invalid { .. })
        ));
        assert!(matches!(
            load_params("desk.d_C = 4"),
            Err(Error::UnknownKey(_))
        ));
        assert!(matches!(
            load_params("compute_merge_factor = 0"),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn infinite_budgets_parse() {
        let p = load_params("D_max = inf, E_max = inf").unwrap();
        assert!(p.d_max.is_infinite() && p.e_max.is_infinite());
        assert_eq!(load_params(&p.to_doc()).unwrap(), p);
    }

    #[test]
    fn combined_config_routes_prefixes() {
        let cfg = Config::from_doc("D_max = 3\ndesk.psnr_db = 20\nenv.gamma = 0.9").unwrap();
        assert_eq!(cfg.system.d_max, 3.0);
        assert_eq!(cfg.desk.psnr_db, 20.0);
        assert_eq!(cfg.env.gamma, 0.9);
        assert!(matches!(
            Config::from_doc("env.nope = 1"),
            Err(Error::UnknownKey(_))
        ));
    }

    #[test]
    fn serialization_is_sorted() {
        let doc = Config::default().to_doc();
        let keys: Vec<&str> = doc
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
