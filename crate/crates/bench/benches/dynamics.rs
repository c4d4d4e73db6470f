use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use physdiff::dynamics::{force_jacobian, inverse_dynamics, mass_matrix, pseudoforce};
use physdiff_bench::scene;

fn dynamics(c: &mut Criterion) {
    let s = scene();
    let (tree, bodies, g) = (&s.body.tree, &s.body.bodies, &s.body.gravity);
    let q = s.sample.x_gt.values().row(8).to_vec();
    let qdot = vec![0.3; q.len()];
    let qddot = vec![-0.2; q.len()];

    c.bench_function("inverse_dynamics", |b| {
        b.iter(|| inverse_dynamics(tree, bodies, black_box(&q), &qdot, &qddot, g).unwrap())
    });
    c.bench_function("mass_matrix", |b| b.iter(|| mass_matrix(tree, bodies, black_box(&q)).unwrap()));
    c.bench_function("pseudoforce_sequence", |b| {
        b.iter(|| pseudoforce(&s.body, black_box(&s.sample.x_gt)).unwrap())
    });
    c.bench_function("force_jacobian_sequence", |b| {
        b.iter(|| force_jacobian(&s.body, black_box(&s.sample.x_gt)).unwrap())
    });
}

criterion_group!(benches, dynamics);
criterion_main!(benches);
