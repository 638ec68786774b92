//! The outer iteratively-reweighted loop and its fast inner solve.
//!
//! Each outer iteration reduces the linearly constrained weighted least
//! squares problem to a small self-adjoint positive-definite system on the
//! tangent coefficient space (a Sherman-Morrison-Woodbury reduction), solves
//! it by conjugate gradients without preconditioning, and reassembles the
//! next iterate in sparse-plus-low-rank form. The weight state comes from a
//! block Krylov pass over the current iterate; the smoothing parameter is
//! driven down by the trailing singular value estimate and never increases.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::operators::{
    tangent_adjoint, OmegaTangentKernel, OperatorError, SamplingPattern, SparsePlusLowRank,
    TangentCoefficients,
};
use crate::problem::{relative_error, GroundTruth, ObservationSet, ProblemError};
use crate::spectral::{top_singular_triplets, SpectralError};
use crate::weights::{ShiftedDiagonal, WeightError, WeightState};

/// Errors surfaced by the solver.
#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite values encountered: {0}")]
    NonFinite(String),
}

/// Tuning knobs for one solve. Defaults follow the reference experimental
/// setup: 400 outer iterations, relative-change stop at 1e-9, at most 500
/// inner CG iterations at tolerance `1e-5 * eps_k / kappa`, 20 block Krylov
/// expansion steps.
#[derive(Debug, Clone)]
pub struct IrlsConfig {
    /// Rank estimate `r~`; the active rank is capped here and the smoothing
    /// tracks the `(r~ + 1)`-th singular value.
    pub rank_estimate: usize,
    pub max_outer: usize,
    pub rel_change_tol: f64,
    pub cg_max_inner: usize,
    pub cg_tol_scale: f64,
    /// Condition-number hint for the CG tolerance rule. When absent the
    /// current top singular value stands in, which is scale-free and known.
    pub kappa_hint: Option<f64>,
    pub krylov_iters: usize,
    /// The run stops once `eps < eps_floor_scale * sigma_1`: below that the
    /// `eps^{-2}`-scaled quantities carry no significant digits.
    pub eps_floor_scale: f64,
    pub seed: u64,
}

impl IrlsConfig {
    pub fn new(rank_estimate: usize) -> Self {
        Self {
            rank_estimate,
            max_outer: 400,
            rel_change_tol: 1e-9,
            cg_max_inner: 500,
            cg_tol_scale: 1e-5,
            kappa_hint: None,
            krylov_iters: 20,
            eps_floor_scale: 100.0 * f64::EPSILON,
            seed: 0,
        }
    }

    fn validate(&self, d1: usize, d2: usize) -> Result<(), SolverError> {
        if self.rank_estimate == 0 || self.rank_estimate + 1 > d1.min(d2) {
            return Err(SolverError::InvalidConfig(format!(
                "rank estimate {} needs rank_estimate + 1 <= min(d1, d2) = {}",
                self.rank_estimate,
                d1.min(d2)
            )));
        }
        if self.max_outer == 0 || self.krylov_iters == 0 || self.cg_max_inner == 0 {
            return Err(SolverError::InvalidConfig(
                "iteration budgets must be positive".into(),
            ));
        }
        for (name, v) in [
            ("rel_change_tol", self.rel_change_tol),
            ("cg_tol_scale", self.cg_tol_scale),
            ("eps_floor_scale", self.eps_floor_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolverError::InvalidConfig(format!(
                    "{name} = {v} must be finite and positive"
                )));
            }
        }
        if let Some(kappa) = self.kappa_hint {
            if !(kappa >= 1.0) || !kappa.is_finite() {
                return Err(SolverError::InvalidConfig(format!(
                    "kappa hint {kappa} must be finite and >= 1"
                )));
            }
        }
        Ok(())
    }
}

/// Why a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum StopReason {
    /// Relative Frobenius change dropped below the threshold.
    Converged { rel_change: f64 },
    /// The outer iteration budget ran out.
    MaxOuterReached,
    /// The smoothing parameter fell below the numerical floor.
    EpsFloorReached { eps: f64 },
}

/// One outer iteration's worth of diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct IterationStat {
    pub eps: f64,
    pub active_rank: usize,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub rel_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
    pub wall_time_s: f64,
}

/// Per-iteration history of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    pub iterations: Vec<IterationStat>,
    pub stop: StopReason,
}

impl ConvergenceRecord {
    /// One JSON object per outer iteration, newline separated.
    pub fn to_json_lines(&self) -> String {
        self.iterations
            .iter()
            .map(|it| serde_json::to_string(it).expect("plain struct serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A completed solve: the final implicit iterate plus its history.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub iterate: SparsePlusLowRank,
    pub record: ConvergenceRecord,
}

/// Conjugate-gradient statistics: iterations spent and the relative
/// residual of the returned iterate.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// The minimum-Frobenius-norm interpolant `P_Omega^*(y)`: the exact first
/// iterate, since the initial weight operator is the identity.
pub fn initial_iterate(y: &ObservationSet) -> SparsePlusLowRank {
    let pattern = y.pattern().clone();
    let (d1, d2) = (pattern.d1(), pattern.d2());
    SparsePlusLowRank::from_parts(
        pattern,
        y.values().to_vec(),
        nalgebra::DMatrix::zeros(d1, 0),
        nalgebra::DMatrix::zeros(d2, 0),
        nalgebra::DMatrix::zeros(d1, 0),
        nalgebra::DMatrix::zeros(d2, 0),
    )
    .expect("observation set is internally consistent")
}

/// The reduced system operator
/// `gamma -> eps^2 (D_S^{-1} - eps^2 I)^{-1} gamma + P_T^* P_Omega^* P_Omega P_T gamma`,
/// self-adjoint and positive definite on the coefficient space.
pub struct GammaSystem {
    kernel: OmegaTangentKernel,
    shifted: ShiftedDiagonal,
}

impl GammaSystem {
    pub fn new(w: &WeightState, pattern: &SamplingPattern) -> Result<Self, SolverError> {
        Ok(Self {
            kernel: OmegaTangentKernel::new(w.basis(), pattern)?,
            shifted: w.shifted_diagonal(),
        })
    }

    pub fn apply(&self, gamma: &TangentCoefficients) -> TangentCoefficients {
        let mut out = self.kernel.adjoint(&self.kernel.apply(gamma));
        let mut diag = gamma.clone();
        self.shifted.apply_in_place(&mut diag, 0.0);
        out.axpy(1.0, &diag);
        out
    }

    /// Right-hand side `P_T^* P_Omega^*(y)`.
    pub fn rhs(&self, y: &[f64]) -> TangentCoefficients {
        self.kernel.adjoint(y)
    }

    pub fn kernel(&self) -> &OmegaTangentKernel {
        &self.kernel
    }

    pub fn shifted(&self) -> &ShiftedDiagonal {
        &self.shifted
    }
}

/// Conjugate gradients over the tangent coefficient space, no
/// preconditioning. Stops on the relative-residual tolerance or the
/// iteration cap, whichever comes first. The residual recurrence is not
/// monotone, so there is no early stagnation exit: cutting a residual
/// plateau short would return the warm start and freeze the outer
/// iteration. Normally the final iterate is returned (it carries the
/// smallest A-norm error of the sweep); if rounding near the attainable
/// floor blew the recurrence up, the best-residual iterate stands in.
pub fn cg_solve(
    apply: impl Fn(&TangentCoefficients) -> TangentCoefficients,
    b: &TangentCoefficients,
    x0: &TangentCoefficients,
    tol: f64,
    max_iter: usize,
) -> Result<(TangentCoefficients, CgStats), SolverError> {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        let mut zero = b.clone();
        zero.scale(0.0);
        return Ok((
            zero,
            CgStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }

    let mut x = x0.clone();
    let mut r = b.clone();
    if x.norm() > 0.0 {
        r.axpy(-1.0, &apply(&x));
    }
    let mut rs = r.dot(&r);
    if !rs.is_finite() {
        return Err(SolverError::NonFinite("cg initial residual".into()));
    }

    let mut iterations = 0;
    let mut best = x.clone();
    let mut best_rs = rs;
    if rs.sqrt() / b_norm > tol {
        let mut p = r.clone();
        for it in 1..=max_iter {
            let ap = apply(&p);
            let pap = p.dot(&ap);
            if !pap.is_finite() {
                return Err(SolverError::NonFinite(format!(
                    "cg curvature at iteration {it}"
                )));
            }
            if pap <= 0.0 {
                // Machine-precision breakdown; the current iterate stands.
                break;
            }
            let alpha = rs / pap;
            x.axpy(alpha, &p);
            r.axpy(-alpha, &ap);
            let rs_new = r.dot(&r);
            if !rs_new.is_finite() {
                return Err(SolverError::NonFinite(format!(
                    "cg residual at iteration {it}"
                )));
            }
            iterations = it;
            if rs_new < best_rs {
                best = x.clone();
                best_rs = rs_new;
            }
            if rs_new.sqrt() / b_norm <= tol {
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            p.scale(beta);
            p.axpy(1.0, &r);
        }
    }

    // True residual of the final iterate; fall back to the best-residual
    // iterate when the recurrence diverged at the attainable floor.
    let true_relres = |g: &TangentCoefficients| -> f64 {
        let mut t = b.clone();
        t.axpy(-1.0, &apply(g));
        t.norm() / b_norm
    };
    let last_res = true_relres(&x);
    let (returned, residual) = if last_res * last_res > 4.0 * best_rs / (b_norm * b_norm) {
        let best_res = true_relres(&best);
        (best, best_res)
    } else {
        (x, last_res)
    };
    Ok((
        returned,
        CgStats {
            iterations,
            residual,
        },
    ))
}

/// Warm start for the reduced system: `(I - eps^2 D_S) P_T^*(X)`, the exact
/// coefficient vector the system solution takes at a fixed point.
pub fn initial_gamma_guess(
    w: &WeightState,
    x_prev: &SparsePlusLowRank,
) -> Result<TangentCoefficients, SolverError> {
    let mut gamma = tangent_adjoint(x_prev, w.basis())?;
    let r = w.rank();
    let eps2 = w.eps() * w.eps();
    for i in 0..r {
        for j in 0..r {
            gamma.gamma1[(i, j)] *= 1.0 - eps2 / (w.sigma()[i] * w.sigma()[j]);
        }
    }
    for i in 0..r {
        let s = 1.0 - w.eps() / w.sigma()[i];
        for j in 0..gamma.gamma2.ncols() {
            gamma.gamma2[(i, j)] *= s;
        }
        for jrow in 0..gamma.gamma3.nrows() {
            gamma.gamma3[(jrow, i)] *= s;
        }
    }
    Ok(gamma)
}

/// One weighted least squares solve against a frozen weight state.
///
/// Steps: build the right-hand side, solve the reduced system by CG from
/// the warm start, form the data residual `r = y - P_Omega P_T(gamma)`,
/// rescale to `gamma~ = D_S^{-1}(D_S^{-1} - eps^2 I)^{-1} gamma - P_T^* P_Omega^*(r)`
/// and pack `X = P_Omega^*(r) + U M1^T + M2 V^T` with
/// `M1 = V Gamma1~^T + Gamma2~^T`, `M2 = Gamma3~`.
pub fn wls_step(
    w: &WeightState,
    y: &ObservationSet,
    guess: &TangentCoefficients,
    cg_tol: f64,
    cg_max_iter: usize,
) -> Result<(SparsePlusLowRank, CgStats), SolverError> {
    let pattern: &Arc<SamplingPattern> = y.pattern();
    if w.d1() != pattern.d1() || w.d2() != pattern.d2() {
        return Err(SolverError::InvalidConfig(format!(
            "weight state is {} x {} but observations are {} x {}",
            w.d1(),
            w.d2(),
            pattern.d1(),
            pattern.d2()
        )));
    }
    let system = GammaSystem::new(w, pattern)?;
    let b = system.rhs(y.values());
    let (gamma, stats) = cg_solve(|g| system.apply(g), &b, guess, cg_tol, cg_max_iter)?;

    let fitted = system.kernel().apply(&gamma);
    let residual: Vec<f64> = y
        .values()
        .iter()
        .zip(&fitted)
        .map(|(yv, f)| yv - f)
        .collect();

    // gamma~ = (1 + shifted diagonal) . gamma - P_T^* P_Omega^*(r); with an
    // exact CG solve the last two terms cancel and gamma~ = gamma.
    let mut gamma_t = gamma;
    system.shifted().apply_in_place(&mut gamma_t, 1.0);
    gamma_t.axpy(-1.0, &system.kernel().adjoint(&residual));
    // One projection per outer iteration to curb constraint drift.
    gamma_t.project_constraints(w.basis());

    if !gamma_t.is_finite() || residual.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("wls iterate assembly".into()));
    }

    let m1 = w.basis().v() * gamma_t.gamma1.transpose() + gamma_t.gamma2.transpose();
    let iterate = SparsePlusLowRank::from_parts(
        pattern.clone(),
        residual,
        w.basis().u().clone(),
        m1,
        gamma_t.gamma3,
        w.basis().v().clone(),
    )?;
    Ok((iterate, stats))
}

/// Smoothing update: `min(eps_prev, sigma_next)`, with `+inf` as the
/// first-iteration sentinel.
pub fn update_smoothing(eps_prev: f64, sigma_next: f64) -> f64 {
    eps_prev.min(sigma_next)
}

/// Active rank `r_k`: strict exceedances `sigma_i > eps`, capped at the
/// rank estimate so the coefficient space never outgrows its stated size.
pub fn determine_active_rank(sigma: &[f64], eps: f64, cap: usize) -> usize {
    sigma.iter().take_while(|&&s| s > eps).count().min(cap)
}

fn mix_seed(seed: u64, k: usize) -> u64 {
    // splitmix64 step keyed by the outer iteration.
    let mut z = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full solve: from observations to a sparse-plus-low-rank completion.
///
/// Per outer iteration: estimate the leading `r~ + 1` singular triplets of
/// the iterate, lower the smoothing to the trailing estimate, rebuild the
/// weight state from the active block, and take one warm-started WLS step.
/// Stops on relative change, the outer budget, or the smoothing floor.
pub fn matrix_irls(
    y: &ObservationSet,
    cfg: &IrlsConfig,
    truth: Option<&GroundTruth>,
) -> Result<SolveOutput, SolverError> {
    cfg.validate(y.d1(), y.d2())?;
    let r_probe = cfg.rank_estimate + 1;

    let mut x = initial_iterate(y);
    let mut eps = f64::INFINITY;
    let mut iterations = Vec::new();
    let mut stop = StopReason::MaxOuterReached;

    for k in 1..=cfg.max_outer {
        let started = Instant::now();
        let spec = top_singular_triplets(&x, r_probe, cfg.krylov_iters, mix_seed(cfg.seed, k))?;
        let sigma_top = spec.sigma[0];
        eps = update_smoothing(eps, spec.sigma[cfg.rank_estimate]);

        let floor = cfg.eps_floor_scale * sigma_top;
        if !(eps > floor) {
            stop = StopReason::EpsFloorReached { eps };
            break;
        }

        // The active block takes every computed triplet strictly above eps.
        // When the smoothing minimum was set at an earlier iteration the
        // current tail can rebound above it; admitting that extra direction
        // (up to the r~ + 1 probed) is what lets the iteration move mass
        // between competing subspaces instead of freezing against the
        // eps^{-2} penalty.
        let r_k = determine_active_rank(&spec.sigma, eps, r_probe);
        let w = WeightState::new(
            spec.u.columns(0, r_k).clone_owned(),
            spec.v.columns(0, r_k).clone_owned(),
            spec.sigma[..r_k].to_vec(),
            eps,
        )?;

        let guess = initial_gamma_guess(&w, &x)?;
        let denom = cfg.kappa_hint.unwrap_or(sigma_top.max(f64::MIN_POSITIVE));
        let cg_tol = cfg.cg_tol_scale * eps / denom;
        let (x_next, cg) = wls_step(&w, y, &guess, cg_tol, cfg.cg_max_inner)?;

        let x_norm = x.frobenius_norm();
        let dist = x_next.frobenius_distance(&x)?;
        let rel_change = if x_norm > 0.0 {
            dist / x_norm
        } else if dist > 0.0 {
            1.0
        } else {
            0.0
        };
        let rel_error = match truth {
            Some(t) => Some(relative_error(&x_next, t)?),
            None => None,
        };

        iterations.push(IterationStat {
            eps,
            active_rank: r_k,
            cg_iterations: cg.iterations,
            cg_residual: cg.residual,
            rel_change,
            rel_error,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        x = x_next;

        if rel_change <= cfg.rel_change_tol {
            stop = StopReason::Converged { rel_change };
            break;
        }
    }

    Ok(SolveOutput {
        iterate: x,
        record: ConvergenceRecord { iterations, stop },
    })
}
