//! The smoothed log-det rank surrogate and its weight operator.
//!
//! `f_eps` smooths `log(sigma)` quadratically below the threshold `eps`;
//! summing it over singular values gives the surrogate objective `F_eps`.
//! Each outer iteration minimizes a quadratic model shaped by the weight
//! operator, which is fully determined by the top singular triplets of the
//! current iterate and `eps`. The solver's fast path never applies the
//! weight operator itself: it only reads the shifted diagonal this module
//! derives from it. The dense routines here exist for tests and diagnostics
//! and cost a full SVD.

use nalgebra::DMatrix;

use crate::operators::TangentBasis;

/// Errors from weight-state construction.
#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("invalid weight state: {0}")]
    InvalidState(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Smoothing floor: states with `eps` below this multiple of `sigma_1`
/// would overflow the `eps^{-2}` scale the operator is built on.
pub const EPS_STATE_FLOOR: f64 = 1e-2 * f64::EPSILON;

/// The smoothed log-det scalar: `log(sigma)` for `sigma >= eps`, the matched
/// quadratic `log(eps) + (sigma^2 / eps^2 - 1) / 2` below.
pub fn f_eps(sigma: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0);
    if sigma >= eps {
        sigma.ln()
    } else {
        eps.ln() + 0.5 * ((sigma * sigma) / (eps * eps) - 1.0)
    }
}

/// `F_eps` over an explicit spectrum.
pub fn f_eps_sum(spectrum: &[f64], eps: f64) -> f64 {
    spectrum.iter().map(|&s| f_eps(s, eps)).sum()
}

/// `F_eps(X)`: sum of `f_eps` over all `min(d1, d2)` singular values.
///
/// Requires a full SVD, so this is an `O(d^3)` diagnostic.
pub fn big_f_eps(x: &DMatrix<f64>, eps: f64) -> f64 {
    let svd = x.clone().svd(false, false);
    svd.singular_values.iter().map(|&s| f_eps(s, eps)).sum()
}

/// Gradient of `F_eps`: applies `sigma -> sigma / max(sigma, eps)^2` to the
/// singular values of `X`. Diagnostic scale, one full SVD.
pub fn grad_f_eps(x: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let vt = svd.v_t.expect("svd with v_t requested");
    let k = svd.singular_values.len();
    let mut scaled = vt.clone();
    for i in 0..k {
        let s = svd.singular_values[i];
        let g = s / s.max(eps).powi(2);
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= g;
        }
    }
    u * scaled
}

/// Everything defining the weight operator at one iterate: the top singular
/// triplets `(U, V, sigma)` with `sigma_i > eps`, and the smoothing `eps`.
#[derive(Debug, Clone)]
pub struct WeightState {
    basis: TangentBasis,
    sigma: Vec<f64>,
    eps: f64,
}

impl WeightState {
    /// Validates and freezes a weight state.
    ///
    /// `sigma` must be positive, nonincreasing and strictly above `eps`
    /// (ties belong to the smoothed block, not here); `u` and `v` need
    /// orthonormal columns. An `eps` below `EPS_STATE_FLOOR * sigma_1` is
    /// rejected since `eps^{-2}` would lose all significance.
    pub fn new(
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        sigma: Vec<f64>,
        eps: f64,
    ) -> Result<Self, WeightError> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(WeightError::InvalidState(format!(
                "eps = {eps} must be finite and positive"
            )));
        }
        if u.ncols() != sigma.len() || v.ncols() != sigma.len() {
            return Err(WeightError::DimensionMismatch(format!(
                "{} singular values against {} / {} basis columns",
                sigma.len(),
                u.ncols(),
                v.ncols()
            )));
        }
        for w in sigma.windows(2) {
            if w[1] > w[0] {
                return Err(WeightError::InvalidState(
                    "singular values must be nonincreasing".into(),
                ));
            }
        }
        if let Some(&last) = sigma.last() {
            if !(last > eps) {
                return Err(WeightError::InvalidState(format!(
                    "active block requires sigma_i > eps, got sigma_min = {last}, eps = {eps}"
                )));
            }
            let top = sigma[0];
            if eps < EPS_STATE_FLOOR * top {
                return Err(WeightError::InvalidState(format!(
                    "eps = {eps} is below the numerical floor {} for sigma_1 = {top}",
                    EPS_STATE_FLOOR * top
                )));
            }
        }
        for (name, q) in [("U", &u), ("V", &v)] {
            let gram = q.transpose() * q;
            let drift = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).norm();
            if drift > 1e-10 * (1.0 + gram.nrows() as f64) {
                return Err(WeightError::InvalidState(format!(
                    "{name} is not orthonormal: drift {drift:.3e}"
                )));
            }
        }
        let basis = TangentBasis::new(u, v)
            .map_err(|e| WeightError::DimensionMismatch(e.to_string()))?;
        Ok(Self { basis, sigma, eps })
    }

    pub fn basis(&self) -> &TangentBasis {
        &self.basis
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `r_k`, the number of active singular values.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn d1(&self) -> usize {
        self.basis.d1()
    }

    pub fn d2(&self) -> usize {
        self.basis.d2()
    }

    /// Upper-left weight block `H_ij = 1 / (sigma_i sigma_j)`.
    pub fn h_block(&self) -> DMatrix<f64> {
        let r = self.rank();
        DMatrix::from_fn(r, r, |i, j| 1.0 / (self.sigma[i] * self.sigma[j]))
    }

    /// Mixed-block diagonal `D_ii = 1 / (sigma_i eps)`.
    pub fn d_diagonal(&self) -> Vec<f64> {
        self.sigma.iter().map(|&s| 1.0 / (s * self.eps)).collect()
    }

    /// The diagonal of `eps^2 (D_S^{-1} - eps^2 I)^{-1}` over the coefficient
    /// space, stored blockwise. All entries are finite and positive because
    /// every `sigma_i` is strictly above `eps`.
    pub fn shifted_diagonal(&self) -> ShiftedDiagonal {
        let r = self.rank();
        let e2 = self.eps * self.eps;
        let gamma1 = DMatrix::from_fn(r, r, |i, j| e2 / (self.sigma[i] * self.sigma[j] - e2));
        let edge: Vec<f64> = self
            .sigma
            .iter()
            .map(|&s| e2 / (s * self.eps - e2))
            .collect();
        ShiftedDiagonal { gamma1, edge }
    }
}

/// The blockwise diagonal `eps^2 (D_S^{-1} - eps^2 I)^{-1}` on the tangent
/// coefficient space: a full `r x r` block for `Gamma1`, one scale per row
/// of `Gamma2` and per column of `Gamma3`.
#[derive(Debug, Clone)]
pub struct ShiftedDiagonal {
    /// Entry `(i, j)` scales `Gamma1[(i, j)]`.
    pub gamma1: DMatrix<f64>,
    /// Entry `i` scales row `i` of `Gamma2` and column `i` of `Gamma3`.
    pub edge: Vec<f64>,
}

impl ShiftedDiagonal {
    /// `out = diag . gamma`, elementwise over the three blocks.
    pub fn apply(&self, gamma: &crate::operators::TangentCoefficients) -> crate::operators::TangentCoefficients {
        let mut out = gamma.clone();
        self.apply_in_place(&mut out, 0.0);
        out
    }

    /// `gamma <- (diag + shift I) . gamma`; `shift = 1` gives the
    /// `D_S^{-1} (D_S^{-1} - eps^2 I)^{-1}` scaling used when assembling the
    /// new iterate.
    pub fn apply_in_place(
        &self,
        gamma: &mut crate::operators::TangentCoefficients,
        shift: f64,
    ) {
        let r = self.edge.len();
        for i in 0..r {
            for j in 0..r {
                gamma.gamma1[(i, j)] *= self.gamma1[(i, j)] + shift;
            }
        }
        for i in 0..r {
            let s = self.edge[i] + shift;
            for j in 0..gamma.gamma2.ncols() {
                gamma.gamma2[(i, j)] *= s;
            }
        }
        for j in 0..r {
            let s = self.edge[j] + shift;
            for i in 0..gamma.gamma3.nrows() {
                gamma.gamma3[(i, j)] *= s;
            }
        }
    }
}

/// Dense action of the weight operator, for tests and diagnostics.
///
/// Implements the four-term split
/// `U [(H - e^-2) . (U^T Z V)] V^T + U (D - e^-2 I) U^T Z (I - V V^T)
///  + (I - U U^T) Z V (D - e^-2 I) V^T + e^-2 Z`.
pub fn apply_weight(w: &WeightState, z: &DMatrix<f64>) -> Result<DMatrix<f64>, WeightError> {
    apply_weight_blocks(w, z, false)
}

/// Dense action of the inverse weight operator: the same structure with
/// every spectral coefficient replaced by its reciprocal.
pub fn apply_weight_inverse(
    w: &WeightState,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>, WeightError> {
    apply_weight_blocks(w, z, true)
}

fn apply_weight_blocks(
    w: &WeightState,
    z: &DMatrix<f64>,
    inverse: bool,
) -> Result<DMatrix<f64>, WeightError> {
    if z.nrows() != w.d1() || z.ncols() != w.d2() {
        return Err(WeightError::DimensionMismatch(format!(
            "Z is {} x {} but the state is {} x {}",
            z.nrows(),
            z.ncols(),
            w.d1(),
            w.d2()
        )));
    }
    let (u, v) = (w.basis.u(), w.basis.v());
    let r = w.rank();
    let eps2 = w.eps * w.eps;
    let outer = if inverse { eps2 } else { 1.0 / eps2 };

    let mut out = z * outer;
    if r == 0 {
        return Ok(out);
    }

    let h = |i: usize, j: usize| -> f64 {
        let prod = w.sigma[i] * w.sigma[j];
        if inverse {
            prod
        } else {
            1.0 / prod
        }
    };
    let d = |i: usize| -> f64 {
        let prod = w.sigma[i] * w.eps;
        if inverse {
            prod
        } else {
            1.0 / prod
        }
    };

    let utz = u.transpose() * z; // r x d2
    let utzv = &utz * v; // r x r
    let zv = z * v; // d1 x r

    // Core block: U [(H - outer) . (U^T Z V)] V^T.
    let mut core = utzv.clone();
    for i in 0..r {
        for j in 0..r {
            core[(i, j)] *= h(i, j) - outer;
        }
    }
    out += u * core * v.transpose();

    // Row block: U (D - outer I) U^T Z (I - V V^T).
    let mut row = utz - &utzv * v.transpose(); // r x d2
    for i in 0..r {
        let s = d(i) - outer;
        for j in 0..row.ncols() {
            row[(i, j)] *= s;
        }
    }
    out += u * row;

    // Column block: (I - U U^T) Z V (D - outer I) V^T.
    let mut col = zv - u * utzv; // d1 x r
    for j in 0..r {
        let s = d(j) - outer;
        for i in 0..col.nrows() {
            col[(i, j)] *= s;
        }
    }
    out += col * v.transpose();

    Ok(out)
}
