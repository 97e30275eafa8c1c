use megsim::costmodel::{breakdown, denoise_steps, kept_tokens, payload_bits};
use megsim::{CompressionMode, SystemParams};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = CompressionMode> {
    prop_oneof![Just(CompressionMode::Merge), Just(CompressionMode::Prune)]
}

proptest! {
    #[test]
    fn totals_are_sums_of_parts(alpha in 0.0f64..=1.0, beta in 0.0f64..=1.0, log_h in -15.0f64..-11.0, m in mode()) {
        let p = SystemParams::default();
        let b = breakdown(alpha, beta, 10f64.powf(log_h), m, &p).unwrap();
        let l = b.latency;
        let e = b.energy;
        prop_assert!((l.total - (l.es + l.ue + l.tr + p.d0)).abs() <= 1e-12 * l.total);
        prop_assert!((e.total - (e.es + e.ue + e.tr + p.e0)).abs() <= 1e-12 * e.total);
        prop_assert!(l.es >= 0.0 && l.ue >= 0.0 && l.tr > 0.0);
        prop_assert!(b.steps <= p.l_max && b.kept >= 1 && b.kept <= p.j_max());
    }

    #[test]
    fn costs_are_monotone(a in 0.0f64..=1.0, da in 0.0f64..=1.0, beta in 0.0f64..=1.0, db in 0.0f64..=1.0, log_h in -15.0f64..-11.0, m in mode()) {
        let p = SystemParams::default();
        let h = 10f64.powf(log_h);
        let a2 = (a + da).min(1.0);
        let b2 = (beta + db).min(1.0);
        let base = breakdown(a, beta, h, m, &p).unwrap();
        let more_steps = breakdown(a2, beta, h, m, &p).unwrap();
        let fewer_tokens = breakdown(a, b2, h, m, &p).unwrap();
        let better_channel = breakdown(a, beta, 2.0 * h, m, &p).unwrap();
        prop_assert!(more_steps.latency.total >= base.latency.total);
        prop_assert!(more_steps.energy.total >= base.energy.total);
        prop_assert!(fewer_tokens.latency.total <= base.latency.total);
        prop_assert!(fewer_tokens.energy.total <= base.energy.total);
        prop_assert!(better_channel.latency.tr < base.latency.tr);
    }

    #[test]
    fn merge_pays_exactly_the_side_information(beta in 0.0f64..=1.0) {
        let p = SystemParams::default();
        let merge = payload_bits(beta, CompressionMode::Merge, &p).unwrap();
        let prune = payload_bits(beta, CompressionMode::Prune, &p).unwrap();
        let removed = p.j_max() - kept_tokens(beta, p.j_max()).unwrap();
        prop_assert_eq!(merge - prune, p.bits as u64 * removed as u64);
    }

    #[test]
    fn out_of_range_ratios_are_rejected(x in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0]) {
        prop_assert!(denoise_steps(x, 8).is_err());
        prop_assert!(kept_tokens(x, 64).is_err());
    }
}

#[test]
fn non_finite_ratios_are_rejected() {
    for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        assert!(denoise_steps(x, 8).is_err());
        assert!(kept_tokens(x, 64).is_err());
    }
}
