//! Non-parametric E-step: particle weights `∝ exp(A/ζ)` with the
//! temperature and cost multipliers set by the convex dual.

pub const ZETA_MIN: f64 = 1e-6;

/// Critic values at `k` particles for each of `states` states, flattened
/// state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleValues {
    pub states: usize,
    pub k: usize,
    pub qr: Vec<f64>,
    pub qc: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualVars {
    pub zeta: f64,
    pub lambda: [f64; 2],
    /// M-step KL multiplier.
    pub omega: f64,
}

impl Default for DualVars {
    fn default() -> Self {
        DualVars {
            zeta: 1.0,
            lambda: [0.0, 0.0],
            omega: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EStepConfig {
    /// KL bound between the variational distribution and `π_n`.
    pub eps0: f64,
    /// Discounted-cost thresholds.
    pub eps: [f64; 2],
    pub lr_zeta: f64,
    pub lr_lambda: f64,
    pub iters: usize,
}

impl Default for EStepConfig {
    fn default() -> Self {
        EStepConfig {
            eps0: 0.1,
            eps: [f64::INFINITY; 2],
            lr_zeta: 0.02,
            lr_lambda: 0.02,
            iters: 10,
        }
    }
}

/// `A = Q_R - Σ λ_i Q_Ci`.
pub fn advantage(qr: f64, qc: &[f64; 2], lambda: &[f64; 2]) -> f64 {
    qr - lambda[0] * qc[0] - lambda[1] * qc[1]
}

/// `exp(a/ζ)` normalized, with the max subtracted first.
pub fn softmax_weights(a: &[f64], zeta: f64) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|x| ((x - m) / zeta).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `log mean exp(a/ζ)`.
fn log_mean_exp(a: &[f64], zeta: f64) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = a.iter().map(|x| ((x - m) / zeta).exp()).sum();
    m / zeta + (s / a.len() as f64).ln()
}

impl ParticleValues {
    fn adv(&self, s: usize, lambda: &[f64; 2]) -> Vec<f64> {
        (s * self.k..(s + 1) * self.k)
            .map(|i| advantage(self.qr[i], &[self.qc[0][i], self.qc[1][i]], lambda))
            .collect()
    }

    pub fn weights(&self, zeta: f64, lambda: &[f64; 2]) -> Vec<f64> {
        (0..self.states)
            .flat_map(|s| softmax_weights(&self.adv(s, lambda), zeta))
            .collect()
    }
}

/// Finite thresholds only; an infinite budget contributes no term.
fn active(eps: &[f64; 2]) -> [bool; 2] {
    eps.map(f64::is_finite)
}

/// `F(ζ, λ) = Σ λ_i ε_i + ζ ε₀ + ζ mean_s log mean_k exp(A/ζ)`.
pub fn dual_value(
    v: &ParticleValues,
    zeta: f64,
    lambda: &[f64; 2],
    eps0: f64,
    eps: &[f64; 2],
) -> f64 {
    let on = active(eps);
    let lam = [
        if on[0] { lambda[0] } else { 0.0 },
        if on[1] { lambda[1] } else { 0.0 },
    ];
    let lse: f64 = (0..v.states)
        .map(|s| log_mean_exp(&v.adv(s, &lam), zeta))
        .sum::<f64>()
        / v.states as f64;
    let lin: f64 = (0..2).filter(|&i| on[i]).map(|i| lam[i] * eps[i]).sum();
    lin + zeta * eps0 + zeta * lse
}

/// `(∂F/∂ζ, ∂F/∂λ)`; zero for inactive multipliers.
pub fn dual_grad(
    v: &ParticleValues,
    zeta: f64,
    lambda: &[f64; 2],
    eps0: f64,
    eps: &[f64; 2],
) -> (f64, [f64; 2]) {
    let on = active(eps);
    let lam = [
        if on[0] { lambda[0] } else { 0.0 },
        if on[1] { lambda[1] } else { 0.0 },
    ];
    let n = v.states as f64;
    let mut g_zeta = eps0;
    let mut g_lam = [0.0; 2];
    for i in 0..2 {
        if on[i] {
            g_lam[i] = eps[i];
        }
    }
    for s in 0..v.states {
        let a = v.adv(s, &lam);
        let w = softmax_weights(&a, zeta);
        g_zeta +=
            (log_mean_exp(&a, zeta) - w.iter().zip(&a).map(|(w, a)| w * a / zeta).sum::<f64>()) / n;
        for i in 0..2 {
            if on[i] {
                let qc = &v.qc[i][s * v.k..(s + 1) * v.k];
                g_lam[i] -= w.iter().zip(qc).map(|(w, q)| w * q).sum::<f64>() / n;
            }
        }
    }
    (g_zeta, g_lam)
}

/// `iters` projected gradient steps on the dual, then the weights at the
/// updated duals.
pub fn estep(v: &ParticleValues, duals: &mut DualVars, cfg: &EStepConfig) -> Vec<f64> {
    for _ in 0..cfg.iters {
        let (gz, gl) = dual_grad(v, duals.zeta, &duals.lambda, cfg.eps0, &cfg.eps);
        duals.zeta = (duals.zeta - cfg.lr_zeta * gz).max(ZETA_MIN);
        for i in 0..2 {
            duals.lambda[i] = (duals.lambda[i] - cfg.lr_lambda * gl[i]).max(0.0);
        }
    }
    v.weights(duals.zeta, &duals.lambda)
}

/// Minimizes the dual to tolerance by projected gradient descent with
/// backtracking; returns `(ζ*, λ*)`.
pub fn solve_dual(v: &ParticleValues, eps0: f64, eps: &[f64; 2]) -> (f64, [f64; 2]) {
    let f = |z: f64, l: &[f64; 2]| dual_value(v, z, l, eps0, eps);
    let (mut z, mut l) = (1.0, [0.0, 0.0]);
    let mut step = 1.0;
    let mut fx = f(z, &l);
    for _ in 0..100_000 {
        let (gz, gl) = dual_grad(v, z, &l, eps0, eps);
        let mut accepted = false;
        while step > 1e-18 {
            let zn = (z - step * gz).max(ZETA_MIN);
            let ln = [
                (l[0] - step * gl[0]).max(0.0),
                (l[1] - step * gl[1]).max(0.0),
            ];
            let fn_ = f(zn, &ln);
            let moved = (zn - z) * gz + (ln[0] - l[0]) * gl[0] + (ln[1] - l[1]) * gl[1];
            let dist2 = (zn - z).powi(2) + (ln[0] - l[0]).powi(2) + (ln[1] - l[1]).powi(2);
            if fn_ <= fx + moved + dist2 / (2.0 * step) {
                if dist2 < 1e-28 {
                    return (zn, ln);
                }
                z = zn;
                l = ln;
                fx = fn_;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    (z, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(qr: &[f64], qc: &[f64]) -> ParticleValues {
        ParticleValues {
            states: 1,
            k: qr.len(),
            qr: qr.to_vec(),
            qc: [qc.to_vec(), vec![0.0; qr.len()]],
        }
    }

    #[test]
    fn two_particle_weights() {
        let w = softmax_weights(&[1.0, 0.0], 1.0);
        assert!((w[0] - 0.731_058_578_6).abs() < 1e-9);
        assert!((w[1] - 0.268_941_421_4).abs() < 1e-9);
        let u = softmax_weights(&[1.0, -3.0, 2.0], 1e12);
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn advantage_cases() {
        assert_eq!(advantage(2.5, &[4.0, 1.0], &[0.0, 0.0]), 2.5);
        assert_eq!(advantage(1.0, &[1.0, 7.0], &[1.0, 0.0]), 0.0);
        assert_eq!(advantage(0.5, &[2.0, -1.0], &[0.25, 3.0]), 0.5 - 0.5 + 3.0);
    }

    #[test]
    fn shift_invariance_and_normalization() {
        let a = [0.3, -1.2, 2.2, 0.0];
        let shifted: Vec<f64> = a.iter().map(|x| x + 1234.5).collect();
        let (w, ws) = (softmax_weights(&a, 0.7), softmax_weights(&shifted, 0.7));
        for (x, y) in w.iter().zip(&ws) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let big = softmax_weights(&[1e6, 0.0], 1e-3);
        assert_eq!(big, vec![1.0, 0.0]);
    }

    #[test]
    fn dual_gradient_matches_differences() {
        let v = ParticleValues {
            states: 2,
            k: 3,
            qr: vec![0.1, 0.5, -0.2, 1.0, 0.0, 0.3],
            qc: [
                vec![1.0, 2.0, 0.5, 0.2, 0.9, 0.4],
                vec![0.0, 0.3, 0.1, 0.5, 0.5, 0.2],
            ],
        };
        let (z, l, e0, e) = (0.6, [0.4, 0.2], 0.1, [0.7, 0.3]);
        let (gz, gl) = dual_grad(&v, z, &l, e0, &e);
        let h = 1e-6;
        let nz =
            (dual_value(&v, z + h, &l, e0, &e) - dual_value(&v, z - h, &l, e0, &e)) / (2.0 * h);
        assert!((nz - gz).abs() < 1e-7);
        for i in 0..2 {
            let (mut up, mut dn) = (l, l);
            up[i] += h;
            dn[i] -= h;
            let n = (dual_value(&v, z, &up, e0, &e) - dual_value(&v, z, &dn, e0, &e)) / (2.0 * h);
            assert!((n - gl[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn multiplier_lowers_weight_of_costliest_particle() {
        let v = single(&[1.0, 0.6, 0.2], &[3.0, 1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for l in [0.0, 0.1, 0.3, 1.0] {
            let w = v.weights(0.5, &[l, 0.0]);
            assert!(w[0] < prev);
            prev = w[0];
        }
    }

    #[test]
    fn infinite_budget_keeps_multiplier_at_zero() {
        let v = single(&[0.1, 0.0], &[5.0, 5.0]);
        let mut d = DualVars::default();
        estep(&v, &mut d, &EStepConfig::default());
        assert_eq!(d.lambda, [0.0, 0.0]);
        assert!(d.zeta < 1.0);
    }
}
