//! Variance-preserving noise schedule and the DDIM update.

use crate::error::{Error, Result};

/// `Ω(τ) = 1 - σ²_diff(τ)` with `σ²_diff` linear from 0 at `τ = 0` to
/// `sigma2_max` at `τ = L_max`. Continuous in `τ` so student windows need
/// not sit on integer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub l_max: usize,
    pub sigma2_max: f64,
}

impl NoiseSchedule {
    pub fn new(l_max: usize, sigma2_max: f64) -> Self {
        assert!(l_max > 0 && sigma2_max > 0.0 && sigma2_max < 1.0);
        NoiseSchedule { l_max, sigma2_max }
    }

    pub fn omega(&self, tau: f64) -> f64 {
        1.0 - self.sigma2_max * tau / self.l_max as f64
    }

    pub fn omega_at(&self, l: usize) -> f64 {
        self.omega(l as f64)
    }

    /// Window boundaries `τ_0 = 0 < τ_1 < … < τ_L = L_max` for `steps`
    /// student steps. Empty for `steps = 0`.
    pub fn windows(&self, steps: usize) -> Vec<f64> {
        if steps == 0 {
            return Vec::new();
        }
        (0..=steps)
            .map(|l| (l * self.l_max) as f64 / steps as f64)
            .collect()
    }

    fn check_level(&self, l: usize, lo: usize) -> Result<()> {
        if l < lo || l > self.l_max {
            return Err(Error::OutOfRange {
                name: "step",
                value: l as f64,
                lo: lo as f64,
                hi: self.l_max as f64,
            });
        }
        Ok(())
    }

    /// `Z^(l) = √Ω_l · Z0 + √(1-Ω_l) · ε`.
    pub fn forward_noise(&self, z0: &[f64], l: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_level(l, 0)?;
        if z0.len() != eps.len() {
            return Err(Error::Dimension {
                expected: z0.len(),
                got: eps.len(),
            });
        }
        Ok(self.forward_noise_tau(z0, l as f64, eps))
    }

    pub fn forward_noise_tau(&self, z0: &[f64], tau: f64, eps: &[f64]) -> Vec<f64> {
        let om = self.omega(tau);
        let (a, b) = (om.sqrt(), (1.0 - om).sqrt());
        z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
    }

    /// DDIM coefficients for the base step `l → l-1`.
    pub fn ddim_coeffs(&self, l: usize) -> Result<(f64, f64)> {
        self.check_level(l, 1)?;
        Ok(ddim_coeffs_between(self.omega_at(l - 1), self.omega_at(l)))
    }

    pub fn ddim_step(&self, z: &[f64], eps_hat: &[f64], l: usize) -> Result<Vec<f64>> {
        let (u, v) = self.ddim_coeffs(l)?;
        Ok(ddim_apply(u, v, z, eps_hat))
    }
}

/// `u = √(Ω_prev/Ω_cur)`, `v = √(1-Ω_prev) - √(Ω_prev(1-Ω_cur)/Ω_cur)`.
pub fn ddim_coeffs_between(omega_prev: f64, omega_cur: f64) -> (f64, f64) {
    let u = (omega_prev / omega_cur).sqrt();
    let v = (1.0 - omega_prev).sqrt() - (omega_prev * (1.0 - omega_cur) / omega_cur).sqrt();
    (u, v)
}

pub fn ddim_apply(u: f64, v: f64, z: &[f64], eps_hat: &[f64]) -> Vec<f64> {
    z.iter().zip(eps_hat).map(|(z, e)| u * z + v * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omegas_decrease_from_one() {
        let s = NoiseSchedule::new(12, 0.98);
        assert_eq!(s.omega_at(0), 1.0);
        for l in 1..=12 {
            assert!(s.omega_at(l) < s.omega_at(l - 1));
        }
        assert!(s.omega_at(12) > 0.0);
        assert_eq!(s.windows(4), vec![0.0, 3.0, 6.0, 9.0, 12.0]);
        assert!(s.windows(0).is_empty());
        assert_eq!(s.windows(5).last(), Some(&12.0));
    }

    #[test]
    fn forward_noise_cases() {
        let s = NoiseSchedule::new(12, 0.98);
        let z0 = [0.5, -1.0, 2.0];
        let eps = [0.3, 0.1, -0.7];
        assert_eq!(s.forward_noise(&z0, 0, &eps).unwrap(), z0.to_vec());
        assert!(s.forward_noise(&z0, 13, &eps).is_err());
        assert!(s.forward_noise(&z0, 1, &eps[..2]).is_err());
        // Ω = 0.25
        let q = NoiseSchedule::new(4, 0.75);
        let out = q.forward_noise(&[0.0; 3], 4, &eps).unwrap();
        for (o, e) in out.iter().zip(&eps) {
            assert!((o - 0.75f64.sqrt() * e).abs() < 1e-15);
        }
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(ddim_coeffs_between(0.6, 0.6), (1.0, 0.0));
        let (u, v) = ddim_coeffs_between(0.81, 0.25);
        assert!((u - 1.8).abs() < 1e-14);
        assert!((v - (0.19f64.sqrt() - 2.43f64.sqrt())).abs() < 1e-14);
        assert!((v + 1.122_955_832_457_922).abs() < 1e-12);
        let s = NoiseSchedule::new(12, 0.98);
        assert!(s.ddim_coeffs(0).is_err());
        assert!(s.ddim_coeffs(13).is_err());
    }

    #[test]
    fn step_with_zero_noise_scales() {
        let s = NoiseSchedule::new(12, 0.98);
        let z = [1.0, -2.0];
        let (u, _) = s.ddim_coeffs(5).unwrap();
        let out = s.ddim_step(&z, &[0.0, 0.0], 5).unwrap();
        assert_eq!(out, vec![u * 1.0, u * -2.0]);
    }
}
