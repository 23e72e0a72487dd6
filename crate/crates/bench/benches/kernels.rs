use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use irvi_core::inference::{air_step, refine_means};
use irvi_core::numerics::logsumexp;
use irvi_core::oracle::exact_logp;
use irvi_core::{Architecture, GenerativeParams, RandomStream, RecognitionParams, RefineConfig, WeightScheme};

fn model(visible: usize, latent: &[usize]) -> (GenerativeParams, RecognitionParams, Vec<f64>) {
    let arch = Architecture::sbn(visible, latent);
    let mut rng = RandomStream::new(3, 0);
    let gen = GenerativeParams::init(&arch, 1.0, &mut rng);
    let rec = RecognitionParams::init(&arch, 0.5, &mut rng);
    let x = (0..visible).map(|i| (i % 3 == 0) as u8 as f64).collect();
    (gen, rec, x)
}

fn kernels(c: &mut Criterion) {
    let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 30.0).collect();
    c.bench_function("logsumexp_1000", |b| b.iter(|| logsumexp(black_box(&v)).unwrap()));

    let (gen, rec, x) = model(784, &[200]);
    let xc: Vec<f64> = x.iter().map(|v| v - 0.5).collect();
    let mu = rec.initial_means_row(&xc).unwrap();
    c.bench_function("air_step_sbn200_m20", |b| {
        let mut rng = RandomStream::new(1, 0);
        b.iter(|| air_step(&gen, &x, &mu, 0.1, 20, WeightScheme::Standard, &mut rng).unwrap())
    });
    let cfg = RefineConfig::new(20, 0.1, 20);
    c.bench_function("refine_sbn200_t20_m20", |b| {
        let mut rng = RandomStream::new(2, 0);
        b.iter(|| refine_means(&gen, &x, &mu, &cfg, &mut rng).unwrap())
    });

    let (small, _, xs) = model(8, &[12]);
    c.bench_function("exact_logp_12_bits", |b| b.iter(|| exact_logp(&small, black_box(&xs)).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
