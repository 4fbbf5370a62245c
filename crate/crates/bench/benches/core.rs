use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use pedcross::calibration::GpSurrogate;
use pedcross::env::{EnvConfig, NonPolicyParams, PedestrianEnv, Variant};
use pedcross::ppo::Mlp;
use pedcross::ScenarioSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn env_episode(c: &mut Criterion) {
    let config = EnvConfig { record_ticks: false, ..EnvConfig::default() };
    let mut env = PedestrianEnv::new(config).unwrap();
    let spec = ScenarioSpec::constant_speed(11.176, 4.0);
    let params = NonPolicyParams::from_array([2.0, 4.0, 1.0, 1.0, 1.0]);
    for (name, variant) in [("env_episode_sm", Variant::SM), ("env_episode_s", Variant::S)] {
        let mut seed = 0;
        c.bench_function(name, |b| {
            b.iter(|| {
                seed += 1;
                env.reset(spec, params, variant, seed).unwrap();
                let mut n = 0;
                while !env.is_done() {
                    env.step(10).unwrap();
                    n += 1;
                }
                black_box(n)
            })
        });
    }
}

fn mlp_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(&[16, 128, 64, 21], 0.01, &mut rng);
    let x = Array2::from_shape_fn((64, 16), |_| rng.random::<f64>());
    c.bench_function("mlp_forward_batch64", |b| b.iter(|| black_box(net.forward(black_box(&x)))));
}

fn gp_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
    let values: Vec<f64> = points.iter().map(|p| p.iter().map(|v| (v - 0.4).powi(2)).sum()).collect();
    let mut group = c.benchmark_group("gp");
    group.sample_size(10);
    group.bench_function("fit_60x5", |b| b.iter(|| black_box(GpSurrogate::fit(&points, &values, 1, 0).unwrap())));
    group.finish();
}

criterion_group!(benches, env_episode, mlp_forward, gp_fit);
criterion_main!(benches);
