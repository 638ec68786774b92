//! Per-outer-iteration cost as the ambient dimension doubles at fixed rank
//! and oversampling. The per-iteration work is dominated by products that
//! scale like m r + r^2 (d1 + d2), so doubling d should roughly double the
//! iteration time.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use matrix_irls::solver::{matrix_irls, IrlsConfig};
use matrix_irls_bench::synthetic_instance;

fn outer_iterations(c: &mut Criterion) {
    let mut group = c.benchmark_group("outer_iterations");
    group.sample_size(10);
    for &d in &[500usize, 1000, 2000] {
        let (_, y) = synthetic_instance(d, 5, 10.0, 3.0, 11);
        let cfg = IrlsConfig {
            max_outer: 6,
            kappa_hint: Some(10.0),
            seed: 5,
            ..IrlsConfig::new(5)
        };
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| matrix_irls(&y, &cfg, None).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, outer_iterations);
criterion_main!(benches);
