//! Low-rank matrix completion by iteratively reweighted least squares.
//!
//! The solver minimizes a smoothed log-det rank surrogate under the
//! entrywise data constraint. Each outer iteration solves a weighted
//! least squares problem whose weight operator is built from the top
//! singular triplets of the current iterate; a Woodbury-style reduction
//! turns that solve into a small positive-definite system on the tangent
//! coefficient space, handled by conjugate gradients. Iterates are kept
//! in sparse-plus-low-rank form throughout, so nothing of size
//! `d1 * d2` is ever materialized outside of diagnostics.
//!
//! Module map:
//! - [`problem`]: synthetic ground truths, sampling sets, error metrics
//! - [`operators`]: implicit sparse-plus-low-rank iterates and the
//!   tangent-space parametrization with its adjoints
//! - [`weights`]: the smoothed log-det machinery and the weight operator
//! - [`spectral`]: seeded randomized block Krylov singular triplets
//! - [`solver`]: the outer loop and the reduced conjugate-gradient step

pub mod operators;
pub mod problem;
pub mod solver;
pub mod spectral;
pub mod weights;

pub use operators::{SamplingPattern, SparsePlusLowRank, TangentBasis, TangentCoefficients};
pub use problem::{DecayProfile, GroundTruth, ObservationSet, ProblemInstance};
pub use solver::{matrix_irls, ConvergenceRecord, IrlsConfig, SolveOutput, StopReason};
pub use spectral::{top_singular_triplets, LinearOperator, SpectralResult};
pub use weights::WeightState;
