//! Microbenchmarks for the two kernels inside every conjugate-gradient
//! iteration and for implicit matrix-vector products.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use matrix_irls::operators::{omega_tangent_adjoint, OmegaTangentKernel, TangentBasis};
use matrix_irls::solver::initial_iterate;
use matrix_irls::spectral::top_singular_triplets;
use matrix_irls_bench::synthetic_instance;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("omega_tangent");
    for &(d, rho) in &[(1000usize, 2.0), (1000, 4.0)] {
        let (_, y) = synthetic_instance(d, 5, 10.0, rho, 3);
        let x = initial_iterate(&y);
        let spec = top_singular_triplets(&x, 5, 10, 7).unwrap();
        let basis = TangentBasis::new(spec.u, spec.v).unwrap();
        let kernel = OmegaTangentKernel::new(&basis, y.pattern()).unwrap();
        let gamma = omega_tangent_adjoint(y.values(), &basis, y.pattern()).unwrap();

        group.bench_with_input(
            BenchmarkId::new("apply", format!("d{d}_rho{rho}")),
            &d,
            |b, _| b.iter(|| kernel.apply(&gamma)),
        );
        let v = kernel.apply(&gamma);
        group.bench_with_input(
            BenchmarkId::new("adjoint", format!("d{d}_rho{rho}")),
            &d,
            |b, _| b.iter(|| kernel.adjoint(&v)),
        );
    }
    group.finish();

    let mut group = c.benchmark_group("splr_matvec");
    for &d in &[1000usize, 2000] {
        let (_, y) = synthetic_instance(d, 5, 10.0, 3.0, 3);
        let x = initial_iterate(&y);
        let z = vec![1.0; d];
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| x.matvec(&z).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
