//! PID control of the cost multipliers.

/// Controller gains `(Kp, Ki, Kd)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.1,
            ki: 0.01,
            kd: 0.01,
        }
    }
}

impl PidGains {
    pub const ZERO: PidGains = PidGains {
        kp: 0.0,
        ki: 0.0,
        kd: 0.0,
    };
}

/// One controller per constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    /// Running error sum, kept ≥ 0 so a long slack period cannot delay the
    /// response to a later violation.
    pub integral: [f64; 2],
    pub prev_err: [f64; 2],
    pub lambda: [f64; 2],
}

impl PidState {
    pub fn new(gains: PidGains) -> Self {
        PidState {
            gains,
            integral: [0.0; 2],
            prev_err: [0.0; 2],
            lambda: [0.0; 2],
        }
    }

    /// `λ_i = [Kp e + Ki Σe + Kd Δe]^+` with `e = J_C − ε`. Constraints
    /// with an infinite threshold are inactive and keep `λ = 0`.
    pub fn update(&mut self, measured: [f64; 2], eps: [f64; 2]) -> [f64; 2] {
        let g = self.gains;
        for i in 0..2 {
            if !eps[i].is_finite() {
                self.lambda[i] = 0.0;
                continue;
            }
            let e = measured[i] - eps[i];
            self.integral[i] = (self.integral[i] + e).max(0.0);
            let de = e - self.prev_err[i];
            self.prev_err[i] = e;
            self.lambda[i] = (g.kp * e + g.ki * self.integral[i] + g.kd * de).max(0.0);
        }
        self.lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_keeps_lambda_zero() {
        let mut p = PidState::new(PidGains::default());
        for _ in 0..10 {
            assert_eq!(p.update([3.0, 1.0], [3.0, 1.0]), [0.0, 0.0]);
        }
    }

    #[test]
    fn proportional_only() {
        let mut p = PidState::new(PidGains {
            kp: 0.5,
            ki: 0.0,
            kd: 0.0,
        });
        assert_eq!(p.update([2.0, 0.0], [1.0, 1.0]), [0.5, 0.0]);
        assert_eq!(p.update([4.0, 3.0], [1.0, 1.0]), [1.5, 1.0]);
    }

    #[test]
    fn step_disturbance_trace() {
        // e: 0, 1, 1, 1 with (Kp, Ki, Kd) = (0.1, 0.01, 0.01):
        // t1: 0.1 + 0.01·1 + 0.01·1 = 0.12
        // t2: 0.1 + 0.01·2 + 0 = 0.12
        // t3: 0.1 + 0.01·3 = 0.13
        let mut p = PidState::new(PidGains::default());
        assert_eq!(p.update([5.0, 0.0], [5.0, f64::INFINITY])[0], 0.0);
        let trace: Vec<f64> = (0..3)
            .map(|_| p.update([6.0, 0.0], [5.0, f64::INFINITY])[0])
            .collect();
        for (got, want) in trace.iter().zip([0.12, 0.12, 0.13]) {
            assert!((got - want).abs() < 1e-15, "{trace:?}");
        }
        assert_eq!(p.lambda[1], 0.0);
    }

    #[test]
    fn lambda_never_negative() {
        let mut p = PidState::new(PidGains::default());
        for k in 0..50 {
            let j = if k % 7 < 3 { 10.0 } else { -20.0 };
            let l = p.update([j, -j], [0.0, 0.0]);
            assert!(l.iter().all(|v| *v >= 0.0));
        }
    }
}
