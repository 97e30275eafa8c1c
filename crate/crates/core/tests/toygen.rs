use std::path::PathBuf;

use megsim::rng::stream;
use megsim::toygen::noisenet::standard_normal;
use megsim::toygen::{synth_task, NoiseSchedule, PipelineConfig, TaskSpec, ToyPipeline};
use megsim::{CompressionMode, DeskParams};
use rand::Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Seed-0 image, stored as one IEEE-754 bit pattern per line. Regenerate
/// with `MEGSIM_BLESS=1` only when the task generator changes on purpose.
#[test]
fn seed_zero_image_matches_golden_fixture() {
    let (_, img) = synth_task(0, 8);
    let path = fixture("task_seed0.txt");
    if std::env::var_os("MEGSIM_BLESS").is_some() {
        let text: String = img
            .iter()
            .map(|v| format!("{:016x}\n", v.to_bits()))
            .collect();
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
    }
    let stored: Vec<f64> = std::fs::read_to_string(&path)
        .expect("golden fixture present")
        .lines()
        .map(|l| f64::from_bits(u64::from_str_radix(l.trim(), 16).unwrap()))
        .collect();
    assert_eq!(stored.len(), 64);
    assert_eq!(stored, img);
}

#[test]
fn ddim_consistency_identity_on_random_tuples() {
    let mut r = stream(100, 0);
    for _ in 0..1000 {
        let l_max = r.random_range(1..=20);
        let s = NoiseSchedule::new(l_max, r.random_range(0.05..0.999));
        let dim = r.random_range(1..=16);
        let z0: Vec<f64> = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
        let eps = standard_normal(dim, &mut r);
        let l = r.random_range(1..=l_max);
        let zl = s.forward_noise(&z0, l, &eps).unwrap();
        let (om, om_prev) = (s.omega_at(l), s.omega_at(l - 1));
        let eps_hat: Vec<f64> = zl
            .iter()
            .zip(&z0)
            .map(|(z, x)| (z - om.sqrt() * x) / (1.0 - om).sqrt())
            .collect();
        let out = s.ddim_step(&zl, &eps_hat, l).unwrap();
        for d in 0..dim {
            let want = om_prev.sqrt() * z0[d] + (1.0 - om_prev).sqrt() * eps[d];
            assert!(
                (out[d] - want).abs() < 1e-12,
                "l={l} got {} want {want}",
                out[d]
            );
        }
    }
}

#[test]
fn forward_noise_second_moment() {
    let s = NoiseSchedule::new(12, 0.98);
    let z0 = [0.7, -1.2, 0.3, 2.0];
    let norm2: f64 = z0.iter().map(|v| v * v).sum();
    let mut r = stream(101, 0);
    for l in [1, 6, 12] {
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let eps = standard_normal(4, &mut r);
            acc += s
                .forward_noise(&z0, l, &eps)
                .unwrap()
                .iter()
                .map(|v| v * v)
                .sum::<f64>();
        }
        let mc = acc / n as f64;
        let om = s.omega_at(l);
        let want = om * norm2 + (1.0 - om) * 4.0;
        assert!((mc - want).abs() / want < 0.01, "l={l}: {mc} vs {want}");
    }
}

fn untrained() -> ToyPipeline {
    let cfg = PipelineConfig {
        prior_tasks: 64,
        ..PipelineConfig::default()
    };
    ToyPipeline::new(&DeskParams::default(), &cfg, 3).unwrap()
}

#[test]
fn mse_falls_as_psnr_rises() {
    let p = untrained();
    let desk = DeskParams::default();
    let mut means = Vec::new();
    for psnr in [0.0, 10.0, 20.0, 30.0, 40.0] {
        let var = desk.peak_power / 10f64.powf(psnr / 10.0);
        let mut total = 0.0;
        for k in 0..50u64 {
            let task = TaskSpec::heldout(k);
            let (z, reference) = p.reference(&task).unwrap();
            let mut r = megsim::rng::substream(5, 0, k);
            total += p
                .quality_sample(&z, &reference, 0.0, CompressionMode::Merge, var, &mut r)
                .unwrap();
        }
        means.push(total / 50.0);
    }
    assert!(means[0] > 0.0);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn noise_at_desk_psnr_gives_positive_mse() {
    let p = untrained();
    let task = TaskSpec::heldout(0);
    let (z, reference) = p.reference(&task).unwrap();
    let m = p
        .quality_sample(
            &z,
            &reference,
            0.0,
            CompressionMode::Merge,
            DeskParams::default().noise_var(),
            &mut stream(6, 0),
        )
        .unwrap();
    assert!(m > 0.0);
}

#[test]
fn es_generate_is_deterministic() {
    let p = untrained();
    let task = TaskSpec::new(11);
    for alpha in [0.0, 0.4, 1.0] {
        assert_eq!(
            p.es_generate(alpha, &task).unwrap(),
            p.es_generate(alpha, &task).unwrap()
        );
    }
}

#[test]
fn end_to_end_mse_trace_is_bit_identical() {
    let cfg = PipelineConfig {
        prior_tasks: 32,
        distill_steps: 30,
        pool_tasks: 8,
        finetune_steps: 30,
        ..PipelineConfig::default()
    };
    let desk = DeskParams::default();
    let run = || {
        let (p, d, f) = ToyPipeline::train(&desk, &cfg, 21).unwrap();
        let q: Vec<f64> = (0..5u64)
            .map(|k| {
                p.quality(
                    &TaskSpec::heldout(k),
                    0.5,
                    0.3,
                    CompressionMode::Merge,
                    &mut stream(22, k),
                )
                .unwrap()
            })
            .collect();
        (d, f, q)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(
        a.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
