//! Shared setup for the solver benchmarks.

use matrix_irls::problem::{
    generate_ground_truth, observe, oversampling_to_m, sample_omega, DecayProfile, GroundTruth,
    ObservationSet,
};

/// A seeded synthetic instance at the given shape.
pub fn synthetic_instance(
    d: usize,
    r: usize,
    kappa: f64,
    rho: f64,
    seed: u64,
) -> (GroundTruth, ObservationSet) {
    let truth =
        generate_ground_truth(d, d, r, kappa, DecayProfile::Exponential, seed).unwrap();
    let m = oversampling_to_m(rho, r, d, d).unwrap();
    let omega = sample_omega(d, d, m, r, seed + 1, 1000).unwrap();
    let y = observe(&truth, &omega).unwrap();
    (truth, y)
}
