//! Dense reference implementations shared by the integration tests.
//!
//! Everything here materializes full matrices and is deliberately
//! independent of the factored production paths it checks.

use std::sync::Arc;

use matrix_irls::operators::{SamplingPattern, SparsePlusLowRank, TangentBasis, TangentCoefficients};
use matrix_irls::weights::{apply_weight_inverse, WeightState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(d1: usize, d2: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn orthonormal(d: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(d, r, rng).qr().q()
}

pub fn random_basis(d1: usize, d2: usize, r: usize, rng: &mut ChaCha8Rng) -> TangentBasis {
    TangentBasis::new(orthonormal(d1, r, rng), orthonormal(d2, r, rng)).unwrap()
}

pub fn random_pattern(d1: usize, d2: usize, m: usize, rng: &mut ChaCha8Rng) -> Arc<SamplingPattern> {
    assert!(m <= d1 * d2);
    let mut set = std::collections::BTreeSet::new();
    while set.len() < m {
        set.insert((rng.random_range(0..d1 as u32), rng.random_range(0..d2 as u32)));
    }
    Arc::new(SamplingPattern::new(d1, d2, set.into_iter().collect()).unwrap())
}

pub fn random_constrained_gamma(basis: &TangentBasis, rng: &mut ChaCha8Rng) -> TangentCoefficients {
    let r = basis.rank();
    let mut gamma = TangentCoefficients {
        gamma1: gaussian(r, r, rng),
        gamma2: gaussian(r, basis.d2(), rng),
        gamma3: gaussian(basis.d1(), r, rng),
    };
    gamma.project_constraints(basis);
    gamma
}

/// A weight state with sigma spread on (eps, scale * eps], orthonormal bases.
pub fn random_weight_state(
    d1: usize,
    d2: usize,
    r: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> WeightState {
    let mut sigma: Vec<f64> = (0..r)
        .map(|_| eps * (1.3 + 4.0 * rng.random::<f64>()))
        .collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    WeightState::new(orthonormal(d1, r, rng), orthonormal(d2, r, rng), sigma, eps).unwrap()
}

/// Dense `P_T(gamma)` straight from the projector formula
/// `U G1 V^T + U G2 (I - V V^T) + (I - U U^T) G3 V^T`.
pub fn dense_tangent_apply(gamma: &TangentCoefficients, basis: &TangentBasis) -> DMatrix<f64> {
    let (u, v) = (basis.u(), basis.v());
    let (d1, d2) = (basis.d1(), basis.d2());
    let pv = DMatrix::identity(d2, d2) - v * v.transpose();
    let pu = DMatrix::identity(d1, d1) - u * u.transpose();
    u * &gamma.gamma1 * v.transpose() + u * &gamma.gamma2 * pv + pu * &gamma.gamma3 * v.transpose()
}

/// Dense `P_T^*(Z) = (U^T Z V, U^T Z (I - V V^T), (I - U U^T) Z V)`.
pub fn dense_tangent_adjoint(z: &DMatrix<f64>, basis: &TangentBasis) -> TangentCoefficients {
    let (u, v) = (basis.u(), basis.v());
    let gamma1 = u.transpose() * z * v;
    let gamma2 = u.transpose() * z - &gamma1 * v.transpose();
    let gamma3 = z * v - u * &gamma1;
    TangentCoefficients {
        gamma1,
        gamma2,
        gamma3,
    }
}

/// `P_Omega(Z)` as a plain vector gather.
pub fn dense_subsample(z: &DMatrix<f64>, pattern: &SamplingPattern) -> Vec<f64> {
    pattern
        .entries()
        .iter()
        .map(|&(i, j)| z[(i as usize, j as usize)])
        .collect()
}

/// `P_Omega^*(v)` as a dense scatter.
pub fn dense_subsample_adjoint(v: &[f64], pattern: &SamplingPattern) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(pattern.d1(), pattern.d2());
    for (&(i, j), &val) in pattern.entries().iter().zip(v) {
        out[(i as usize, j as usize)] = val;
    }
    out
}

/// The closed-form weighted least squares minimizer
/// `X = W^{-1} P_Omega^* (P_Omega W^{-1} P_Omega^*)^{-1} y`, built densely:
/// the `m x m` system matrix is assembled column by column through the dense
/// inverse weight action and solved by LU.
pub fn dense_wls_solve(
    w: &WeightState,
    pattern: &SamplingPattern,
    y: &[f64],
) -> DMatrix<f64> {
    let m = pattern.len();
    let mut gram = DMatrix::zeros(m, m);
    for ell in 0..m {
        let mut unit = vec![0.0; m];
        unit[ell] = 1.0;
        let col = apply_weight_inverse(w, &dense_subsample_adjoint(&unit, pattern)).unwrap();
        let sampled = dense_subsample(&col, pattern);
        for (row, val) in sampled.into_iter().enumerate() {
            gram[(row, ell)] = val;
        }
    }
    let z = gram
        .lu()
        .solve(&DVector::from_row_slice(y))
        .expect("dense WLS gram matrix is positive definite");
    apply_weight_inverse(w, &dense_subsample_adjoint(z.as_slice(), pattern)).unwrap()
}

pub fn dense_of(x: &SparsePlusLowRank) -> DMatrix<f64> {
    x.to_dense().expect("test instances stay under the dense gate")
}
