use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use physdiff::denoiser::{Denoiser, LaplaceDenoiser};
use physdiff::diffusion::refine;
use physdiff::uncertainty::{propagate, DEFAULT_SAMPLES};
use physdiff_bench::scene;

fn refinement(c: &mut Criterion) {
    let s = scene();
    let y = &s.sample.y;
    let laplace = LaplaceDenoiser {
        model: &s.model,
        posterior: &s.posterior,
    };

    c.bench_function("denoiser_forward", |b| b.iter(|| s.model.predict(black_box(y), y, 2).unwrap()));
    c.bench_function("refine_chain", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| refine(black_box(y), &s.model, &s.schedule, &mut rng).unwrap())
    });
    let mut group = c.benchmark_group("propagate");
    group.sample_size(10);
    group.bench_function("default_samples", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        b.iter(|| propagate(black_box(y), &laplace, &s.schedule, DEFAULT_SAMPLES, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, refinement);
criterion_main!(benches);
