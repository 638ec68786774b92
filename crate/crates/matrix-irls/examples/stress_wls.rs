//! Stress the WLS step against the dense closed form in the stall regime:
//! sigma spread over [1, 10] with eps = 5e-3.

use std::sync::Arc;

use matrix_irls::operators::{SamplingPattern, TangentCoefficients};
use matrix_irls::problem::ObservationSet;
use matrix_irls::solver::wls_step;
use matrix_irls::weights::{apply_weight_inverse, WeightState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(d1: usize, d2: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..6 {
        let (d1, d2, r) = (20usize, 25usize, 5usize);
        let m = 200;
        let mut set = std::collections::BTreeSet::new();
        while set.len() < m {
            set.insert((rng.random_range(0..d1 as u32), rng.random_range(0..d2 as u32)));
        }
        let pattern =
            Arc::new(SamplingPattern::new(d1, d2, set.into_iter().collect()).unwrap());
        let eps = 5e-3;
        let sigma: Vec<f64> = (0..r).map(|i| 10.0 * (0.56_f64).powi(i as i32)).collect();
        let w = WeightState::new(
            gaussian(d1, r, &mut rng).qr().q(),
            gaussian(d2, r, &mut rng).qr().q(),
            sigma,
            eps,
        )
        .unwrap();
        let y_vals: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let y = ObservationSet::new(pattern.clone(), y_vals.clone()).unwrap();
        let guess = TangentCoefficients::zeros(d1, d2, r);
        let (x, stats) = wls_step(&w, &y, &guess, 1e-14, 20000).unwrap();

        // Dense closed form.
        let scatter = |v: &[f64]| -> DMatrix<f64> {
            let mut out = DMatrix::zeros(d1, d2);
            for (&(i, j), &val) in pattern.entries().iter().zip(v) {
                out[(i as usize, j as usize)] = val;
            }
            out
        };
        let mut gram = DMatrix::zeros(m, m);
        for ell in 0..m {
            let mut unit = vec![0.0; m];
            unit[ell] = 1.0;
            let col = apply_weight_inverse(&w, &scatter(&unit)).unwrap();
            for (row, &(i, j)) in pattern.entries().iter().enumerate() {
                gram[(row, ell)] = col[(i as usize, j as usize)];
            }
        }
        let z = gram.lu().solve(&DVector::from_row_slice(&y_vals)).unwrap();
        let want = apply_weight_inverse(&w, &scatter(z.as_slice())).unwrap();
        let got = x.to_dense().unwrap();
        let rel = (&got - &want).norm() / want.norm();
        println!(
            "trial {trial}: rel={rel:.3e} cg_res={:.3e} cg_it={}",
            stats.residual, stats.iterations
        );
    }
}
