use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use megsim::channel::mean_gain;
use megsim::costmodel::breakdown;
use megsim::cvpo::estep::{solve_dual, ParticleValues};
use megsim::cvpo::GaussianPolicy;
use megsim::nn::Mlp;
use megsim::rng::stream;
use megsim::tokenmerge::{apply_merge, plan_merge, LatentFeature};
use megsim::{CompressionMode, SystemParams};
use rand::Rng;

fn cost_model(c: &mut Criterion) {
    let p = SystemParams::default();
    let h = mean_gain(p.dist, &p);
    c.bench_function("breakdown", |b| {
        b.iter(|| {
            breakdown(
                black_box(0.67),
                black_box(0.5),
                h,
                CompressionMode::Merge,
                &p,
            )
            .unwrap()
        })
    });
}

fn token_merge(c: &mut Criterion) {
    let mut r = stream(1, 0);
    let (channels, tokens) = (16, 1024);
    let z = LatentFeature::new(
        channels,
        (0..channels * tokens)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    c.bench_function("plan_and_merge_1024", |b| {
        b.iter(|| {
            let plan = plan_merge(&z, 0.5, 16, &mut stream(2, 0)).unwrap();
            apply_merge(&z, &plan).unwrap()
        })
    });
}

fn networks(c: &mut Criterion) {
    let mut r = stream(3, 0);
    let mlp = Mlp::new(&[5, 64, 64, 1], false, &mut r);
    let x: Vec<f64> = (0..256 * 5).map(|_| r.random_range(-1.0..1.0)).collect();
    c.bench_function("mlp_forward_batch_256", |b| {
        b.iter(|| mlp.forward_batch(black_box(&x)))
    });
    let policy = GaussianPolicy::new(&mut r);
    let obs = [0.1, 0.5, 0.3];
    c.bench_function("policy_sample", |b| {
        b.iter(|| policy.sample(black_box(&obs), &mut r))
    });
}

fn estep(c: &mut Criterion) {
    let mut r = stream(4, 0);
    let (states, k) = (64, 32);
    let v = ParticleValues {
        states,
        k,
        qr: (0..states * k).map(|_| r.random_range(-1.0..0.0)).collect(),
        qc: [
            (0..states * k).map(|_| r.random_range(0.0..2.0)).collect(),
            vec![0.0; states * k],
        ],
    };
    c.bench_function("solve_dual_64x32", |b| {
        b.iter(|| solve_dual(black_box(&v), 0.1, &[1.0, f64::INFINITY]))
    });
}

criterion_group!(benches, cost_model, token_merge, networks, estep);
criterion_main!(benches);
