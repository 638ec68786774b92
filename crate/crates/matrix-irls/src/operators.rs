//! Implicit linear operators: sparse-plus-low-rank iterates, the subsampling
//! layout, and the tangent-space parametrization with its adjoint.
//!
//! Everything here works against factored storage of size `O(m + r (d1 + d2))`.
//! Dense materialization exists only as a size-gated diagnostic.

use std::sync::Arc;

use nalgebra::DMatrix;

/// Largest `d1 * d2` for which [`SparsePlusLowRank::to_dense`] will run.
pub const DENSE_DIAGNOSTIC_LIMIT: usize = 4096;

/// Errors raised by the operator layer.
#[derive(Debug, thiserror::Error)]
pub enum OperatorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index ({i}, {j}) out of range for {d1} x {d2}")]
    IndexOutOfRange { i: usize, j: usize, d1: usize, d2: usize },
    #[error("duplicate sampled index ({i}, {j})")]
    DuplicateIndex { i: usize, j: usize },
    #[error("tangent coefficients violate constraints: {0}")]
    ConstraintViolation(String),
    #[error("dense materialization is gated to d1 * d2 <= {DENSE_DIAGNOSTIC_LIMIT}")]
    TooLargeForDense,
}

/// The sampled index set: distinct pairs kept in row-major order so every
/// scatter/gather below is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPattern {
    d1: usize,
    d2: usize,
    entries: Vec<(u32, u32)>,
}

impl SamplingPattern {
    /// Canonicalizes (sorts row-major) and validates the index pairs.
    pub fn new(d1: usize, d2: usize, mut entries: Vec<(u32, u32)>) -> Result<Self, OperatorError> {
        for &(i, j) in &entries {
            if i as usize >= d1 || j as usize >= d2 {
                return Err(OperatorError::IndexOutOfRange {
                    i: i as usize,
                    j: j as usize,
                    d1,
                    d2,
                });
            }
        }
        entries.sort_unstable();
        for w in entries.windows(2) {
            if w[0] == w[1] {
                return Err(OperatorError::DuplicateIndex {
                    i: w[0].0 as usize,
                    j: w[0].1 as usize,
                });
            }
        }
        Ok(Self { d1, d2, entries })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Copies a column-major factor into a flat row-major buffer so per-entry
/// loops read contiguous slices.
fn to_row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let (n, r) = (a.nrows(), a.ncols());
    let mut out = vec![0.0; n * r];
    for k in 0..r {
        let col = a.column(k);
        for i in 0..n {
            out[i * r + k] = col[i];
        }
    }
    out
}

/// An implicit `d1 x d2` matrix `P_Omega^*(residual) + U_left M1^T + M2 V_right^T`.
///
/// Storage is `O(m + r (d1 + d2))`; matrix-vector products run in the same
/// order. The two rank blocks may have different widths (either may be empty).
#[derive(Debug, Clone)]
pub struct SparsePlusLowRank {
    pattern: Arc<SamplingPattern>,
    residual: Vec<f64>,
    u_left: DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    v_right: DMatrix<f64>,
}

impl SparsePlusLowRank {
    /// The zero operator on a given sampling layout.
    pub fn zero(pattern: Arc<SamplingPattern>) -> Self {
        let (d1, d2, m) = (pattern.d1(), pattern.d2(), pattern.len());
        Self {
            pattern,
            residual: vec![0.0; m],
            u_left: DMatrix::zeros(d1, 0),
            m1: DMatrix::zeros(d2, 0),
            m2: DMatrix::zeros(d1, 0),
            v_right: DMatrix::zeros(d2, 0),
        }
    }

    /// Assembles an operator from its parts, checking all dimensions.
    pub fn from_parts(
        pattern: Arc<SamplingPattern>,
        residual: Vec<f64>,
        u_left: DMatrix<f64>,
        m1: DMatrix<f64>,
        m2: DMatrix<f64>,
        v_right: DMatrix<f64>,
    ) -> Result<Self, OperatorError> {
        let (d1, d2) = (pattern.d1(), pattern.d2());
        if residual.len() != pattern.len() {
            return Err(OperatorError::DimensionMismatch(format!(
                "residual has {} entries but the pattern has {}",
                residual.len(),
                pattern.len()
            )));
        }
        if u_left.nrows() != d1 || m2.nrows() != d1 || m1.nrows() != d2 || v_right.nrows() != d2 {
            return Err(OperatorError::DimensionMismatch(format!(
                "factor rows do not match ambient dims {d1} x {d2}"
            )));
        }
        if u_left.ncols() != m1.ncols() || m2.ncols() != v_right.ncols() {
            return Err(OperatorError::DimensionMismatch(
                "paired factors must have equal column counts".into(),
            ));
        }
        Ok(Self {
            pattern,
            residual,
            u_left,
            m1,
            m2,
            v_right,
        })
    }

    pub fn pattern(&self) -> &Arc<SamplingPattern> {
        &self.pattern
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn u_left(&self) -> &DMatrix<f64> {
        &self.u_left
    }

    pub fn m1(&self) -> &DMatrix<f64> {
        &self.m1
    }

    pub fn m2(&self) -> &DMatrix<f64> {
        &self.m2
    }

    pub fn v_right(&self) -> &DMatrix<f64> {
        &self.v_right
    }

    pub fn d1(&self) -> usize {
        self.pattern.d1()
    }

    pub fn d2(&self) -> usize {
        self.pattern.d2()
    }

    /// `X z` for `z` of length `d2`.
    pub fn matvec(&self, z: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if z.len() != self.d2() {
            return Err(OperatorError::DimensionMismatch(format!(
                "matvec input has length {} but d2 = {}",
                z.len(),
                self.d2()
            )));
        }
        let mut out = vec![0.0; self.d1()];
        for (&(i, j), &r) in self.pattern.entries().iter().zip(&self.residual) {
            out[i as usize] += r * z[j as usize];
        }
        accumulate_product(&mut out, &self.u_left, &self.m1, z);
        accumulate_product(&mut out, &self.m2, &self.v_right, z);
        Ok(out)
    }

    /// `X^T z` for `z` of length `d1`.
    pub fn rmatvec(&self, z: &[f64]) -> Result<Vec<f64>, OperatorError> {
        if z.len() != self.d1() {
            return Err(OperatorError::DimensionMismatch(format!(
                "rmatvec input has length {} but d1 = {}",
                z.len(),
                self.d1()
            )));
        }
        let mut out = vec![0.0; self.d2()];
        for (&(i, j), &r) in self.pattern.entries().iter().zip(&self.residual) {
            out[j as usize] += r * z[i as usize];
        }
        accumulate_product(&mut out, &self.m1, &self.u_left, z);
        accumulate_product(&mut out, &self.v_right, &self.m2, z);
        Ok(out)
    }

    /// Entry `(i, j)`, evaluated from the factored form in `O(m log m + r)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        if let Ok(pos) = self
            .pattern
            .entries()
            .binary_search(&(i as u32, j as u32))
        {
            acc += self.residual[pos];
        }
        for k in 0..self.u_left.ncols() {
            acc += self.u_left[(i, k)] * self.m1[(j, k)];
        }
        for k in 0..self.m2.ncols() {
            acc += self.m2[(i, k)] * self.v_right[(j, k)];
        }
        acc
    }

    /// Frobenius norm of the represented matrix.
    pub fn frobenius_norm(&self) -> f64 {
        let empty_a = DMatrix::zeros(self.d1(), 0);
        let empty_b = DMatrix::zeros(self.d2(), 0);
        self.frobenius_norm_with_extra(&empty_a, &empty_b)
    }

    /// Frobenius norm of `X + A B^T` for extra low-rank columns `A`, `B`.
    ///
    /// The stacked factors are compressed through a thin QR before any norm
    /// is taken, so near-cancelling rank parts do not lose accuracy to a
    /// large-term Gram expansion.
    pub fn frobenius_norm_with_extra(&self, a_extra: &DMatrix<f64>, b_extra: &DMatrix<f64>) -> f64 {
        let a = hstack(&[&self.u_left, &self.m2, a_extra]);
        let b = hstack(&[&self.m1, &self.v_right, b_extra]);
        lowrank_plus_sparse_norm(&self.pattern, &self.residual, &a, &b)
    }

    /// Frobenius norm of the difference of two iterates sharing one layout.
    pub fn frobenius_distance(&self, other: &Self) -> Result<f64, OperatorError> {
        if !Arc::ptr_eq(&self.pattern, &other.pattern) && self.pattern != other.pattern {
            return Err(OperatorError::DimensionMismatch(
                "iterates do not share a sampling layout".into(),
            ));
        }
        let sparse: Vec<f64> = self
            .residual
            .iter()
            .zip(&other.residual)
            .map(|(a, b)| a - b)
            .collect();
        let a = hstack(&[&self.u_left, &self.m2, &other.u_left, &other.m2]);
        let b = hstack_negating(
            &[&self.m1, &self.v_right],
            &[&other.m1, &other.v_right],
        );
        Ok(lowrank_plus_sparse_norm(&self.pattern, &sparse, &a, &b))
    }

    /// Dense materialization for diagnostics and tests only.
    pub fn to_dense(&self) -> Result<DMatrix<f64>, OperatorError> {
        let (d1, d2) = (self.d1(), self.d2());
        if d1 * d2 > DENSE_DIAGNOSTIC_LIMIT {
            return Err(OperatorError::TooLargeForDense);
        }
        let mut out = DMatrix::zeros(d1, d2);
        for (&(i, j), &r) in self.pattern.entries().iter().zip(&self.residual) {
            out[(i as usize, j as usize)] += r;
        }
        out += &self.u_left * self.m1.transpose();
        out += &self.m2 * self.v_right.transpose();
        Ok(out)
    }
}

/// `out += A (B^T z)` with `A: n x p`, `B: k x p`, column-major friendly.
fn accumulate_product(out: &mut [f64], a: &DMatrix<f64>, b: &DMatrix<f64>, z: &[f64]) {
    let p = a.ncols();
    if p == 0 {
        return;
    }
    for k in 0..p {
        let bz: f64 = b.column(k).iter().zip(z).map(|(x, y)| x * y).sum();
        if bz != 0.0 {
            for (o, &x) in out.iter_mut().zip(a.column(k).iter()) {
                *o += x * bz;
            }
        }
    }
}

fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let nrows = parts.iter().map(|p| p.nrows()).max().unwrap_or(0);
    let ncols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut at = 0;
    for p in parts {
        for k in 0..p.ncols() {
            out.column_mut(at).copy_from(&p.column(k));
            at += 1;
        }
    }
    out
}

fn hstack_negating(keep: &[&DMatrix<f64>], negate: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let pos = hstack(keep);
    let mut neg = hstack(negate);
    neg.neg_mut();
    hstack(&[&pos, &neg])
}

/// `|| P_Omega^*(sparse) + A B^T ||_F` without forming anything dense.
///
/// `A` is compressed by a thin QR so the low-rank norm reduces to entry sums
/// of the small product `R B^T`; the cross term is a plain `O(m p)` sweep.
fn lowrank_plus_sparse_norm(
    pattern: &SamplingPattern,
    sparse: &[f64],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> f64 {
    let sparse_sq: f64 = sparse.iter().map(|s| s * s).sum();
    let p = a.ncols();
    if p == 0 {
        return sparse_sq.sqrt();
    }

    let mut cross = 0.0;
    {
        let a_rows = to_row_major(a);
        let b_rows = to_row_major(b);
        for (&(i, j), &s) in pattern.entries().iter().zip(sparse) {
            if s != 0.0 {
                let ar = &a_rows[i as usize * p..(i as usize + 1) * p];
                let br = &b_rows[j as usize * p..(j as usize + 1) * p];
                let dot: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                cross += s * dot;
            }
        }
    }

    let qr = a.clone().qr();
    let t = qr.r() * b.transpose();
    let lowrank_sq: f64 = t.iter().map(|x| x * x).sum();

    (sparse_sq + 2.0 * cross + lowrank_sq).max(0.0).sqrt()
}

/// The pair `(U, V)` of orthonormal factors fixing a tangent space.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl TangentBasis {
    /// Pairs the factors; both must have the same number of columns.
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self, OperatorError> {
        if u.ncols() != v.ncols() {
            return Err(OperatorError::DimensionMismatch(format!(
                "U has {} columns but V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn d1(&self) -> usize {
        self.u.nrows()
    }

    pub fn d2(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

/// An element of the tangent coefficient space: blocks `(Gamma1, Gamma2, Gamma3)`
/// of shapes `r x r`, `r x d2`, `d1 x r` subject to `Gamma2 V = 0` and
/// `U^T Gamma3 = 0`.
#[derive(Debug, Clone)]
pub struct TangentCoefficients {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
    pub gamma3: DMatrix<f64>,
}

impl TangentCoefficients {
    pub fn zeros(d1: usize, d2: usize, r: usize) -> Self {
        Self {
            gamma1: DMatrix::zeros(r, r),
            gamma2: DMatrix::zeros(r, d2),
            gamma3: DMatrix::zeros(d1, r),
        }
    }

    pub fn rank(&self) -> usize {
        self.gamma1.nrows()
    }

    /// Total coefficient count `r (d1 + d2 + r)`.
    pub fn len(&self) -> usize {
        self.gamma1.len() + self.gamma2.len() + self.gamma3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean inner product over the three stacked blocks.
    pub fn dot(&self, other: &Self) -> f64 {
        block_dot(&self.gamma1, &other.gamma1)
            + block_dot(&self.gamma2, &other.gamma2)
            + block_dot(&self.gamma3, &other.gamma3)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).max(0.0).sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.gamma1.zip_apply(&other.gamma1, |a, b| *a += alpha * b);
        self.gamma2.zip_apply(&other.gamma2, |a, b| *a += alpha * b);
        self.gamma3.zip_apply(&other.gamma3, |a, b| *a += alpha * b);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.gamma1 *= alpha;
        self.gamma2 *= alpha;
        self.gamma3 *= alpha;
    }

    /// Frobenius norms of `Gamma2 V` and `U^T Gamma3`, both zero on the
    /// constraint set.
    pub fn constraint_residuals(&self, basis: &TangentBasis) -> (f64, f64) {
        let g2v = &self.gamma2 * basis.v();
        let ug3 = basis.u().transpose() * &self.gamma3;
        (g2v.norm(), ug3.norm())
    }

    /// Removes any component violating the two orthogonality constraints.
    pub fn project_constraints(&mut self, basis: &TangentBasis) {
        let g2v = &self.gamma2 * basis.v();
        self.gamma2 -= g2v * basis.v().transpose();
        let ug3 = basis.u().transpose() * &self.gamma3;
        self.gamma3 -= basis.u() * ug3;
    }

    pub fn is_finite(&self) -> bool {
        self.gamma1.iter().all(|x| x.is_finite())
            && self.gamma2.iter().all(|x| x.is_finite())
            && self.gamma3.iter().all(|x| x.is_finite())
    }
}

fn block_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_dims(
    gamma: &TangentCoefficients,
    basis: &TangentBasis,
) -> Result<(), OperatorError> {
    let r = basis.rank();
    if gamma.gamma1.nrows() != r
        || gamma.gamma1.ncols() != r
        || gamma.gamma2.nrows() != r
        || gamma.gamma2.ncols() != basis.d2()
        || gamma.gamma3.nrows() != basis.d1()
        || gamma.gamma3.ncols() != r
    {
        return Err(OperatorError::DimensionMismatch(
            "tangent coefficient blocks do not match the basis".into(),
        ));
    }
    Ok(())
}

/// Relative tolerance used when validating the two tangent constraints.
const CONSTRAINT_TOL: f64 = 1e-8;

/// The parametrization `P_T(gamma) = U Gamma1 V^T + U Gamma2 (I - V V^T)
/// + (I - U U^T) Gamma3 V^T`, packed as a zero-residual operator.
///
/// When the constraints hold this collapses to `U (V Gamma1^T + Gamma2^T)^T
/// + Gamma3 V^T`, which is the packing used here.
pub fn tangent_apply(
    gamma: &TangentCoefficients,
    basis: &TangentBasis,
    pattern: &Arc<SamplingPattern>,
) -> Result<SparsePlusLowRank, OperatorError> {
    check_dims(gamma, basis)?;
    if pattern.d1() != basis.d1() || pattern.d2() != basis.d2() {
        return Err(OperatorError::DimensionMismatch(
            "pattern dims do not match the basis".into(),
        ));
    }
    let (g2v, ug3) = gamma.constraint_residuals(basis);
    let scale = gamma.norm();
    if g2v > CONSTRAINT_TOL * (1.0 + scale) || ug3 > CONSTRAINT_TOL * (1.0 + scale) {
        return Err(OperatorError::ConstraintViolation(format!(
            "|Gamma2 V| = {g2v:.3e}, |U^T Gamma3| = {ug3:.3e} at scale {scale:.3e}"
        )));
    }
    let m1 = basis.v() * gamma.gamma1.transpose() + gamma.gamma2.transpose();
    SparsePlusLowRank::from_parts(
        pattern.clone(),
        vec![0.0; pattern.len()],
        basis.u().clone(),
        m1,
        gamma.gamma3.clone(),
        basis.v().clone(),
    )
}

/// The adjoint `P_T^*(Z) = (U^T Z V, U^T Z (I - V V^T), (I - U U^T) Z V)`,
/// evaluated against the sparse-plus-low-rank structure of `Z`.
pub fn tangent_adjoint(
    z: &SparsePlusLowRank,
    basis: &TangentBasis,
) -> Result<TangentCoefficients, OperatorError> {
    if z.d1() != basis.d1() || z.d2() != basis.d2() {
        return Err(OperatorError::DimensionMismatch(
            "operator dims do not match the basis".into(),
        ));
    }
    let r = basis.rank();
    let (d1, d2) = (z.d1(), z.d2());

    // U^T Z, r x d2: sparse scatter plus two thin products.
    let mut utz = DMatrix::zeros(r, d2);
    if r > 0 {
        let u_rows = to_row_major(basis.u());
        for (&(i, j), &res) in z.pattern().entries().iter().zip(z.residual()) {
            if res != 0.0 {
                let ur = &u_rows[i as usize * r..(i as usize + 1) * r];
                let mut col = utz.column_mut(j as usize);
                for (c, &u) in col.iter_mut().zip(ur) {
                    *c += res * u;
                }
            }
        }
        utz += (basis.u().transpose() * z.u_left()) * z.m1().transpose();
        utz += (basis.u().transpose() * z.m2()) * z.v_right().transpose();
    }

    // Z V, d1 x r: mirrored accumulation.
    let mut zv = DMatrix::zeros(d1, r);
    if r > 0 {
        let v_rows = to_row_major(basis.v());
        let mut zv_rows = vec![0.0; d1 * r];
        for (&(i, j), &res) in z.pattern().entries().iter().zip(z.residual()) {
            if res != 0.0 {
                let vr = &v_rows[j as usize * r..(j as usize + 1) * r];
                let row = &mut zv_rows[i as usize * r..(i as usize + 1) * r];
                for (c, &v) in row.iter_mut().zip(vr) {
                    *c += res * v;
                }
            }
        }
        for i in 0..d1 {
            for k in 0..r {
                zv[(i, k)] = zv_rows[i * r + k];
            }
        }
        zv += z.u_left() * (z.m1().transpose() * basis.v());
        zv += z.m2() * (z.v_right().transpose() * basis.v());
    }

    let gamma1 = &utz * basis.v();
    let gamma2 = utz - &gamma1 * basis.v().transpose();
    let gamma3 = zv - basis.u() * &gamma1;
    Ok(TangentCoefficients {
        gamma1,
        gamma2,
        gamma3,
    })
}

/// Precomputed row-major views of a tangent basis over one sampling layout.
///
/// This is the kernel both conjugate-gradient operators are built from; it
/// applies `P_Omega P_T` and its adjoint in `O(m r + r^2 (d1 + d2))`.
pub struct OmegaTangentKernel {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    u_rows: Vec<f64>,
    v_rows: Vec<f64>,
    entries: Vec<(u32, u32)>,
    d1: usize,
    d2: usize,
}

impl OmegaTangentKernel {
    pub fn new(basis: &TangentBasis, pattern: &SamplingPattern) -> Result<Self, OperatorError> {
        if pattern.d1() != basis.d1() || pattern.d2() != basis.d2() {
            return Err(OperatorError::DimensionMismatch(
                "pattern dims do not match the basis".into(),
            ));
        }
        Ok(Self {
            u: basis.u().clone(),
            v: basis.v().clone(),
            u_rows: to_row_major(basis.u()),
            v_rows: to_row_major(basis.v()),
            entries: pattern.entries().to_vec(),
            d1: basis.d1(),
            d2: basis.d2(),
        })
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn m(&self) -> usize {
        self.entries.len()
    }

    /// `(P_Omega P_T (gamma))_l`, the entrywise sum formula: after one
    /// `r^2 d2` precompute of `Gamma1 V^T + Gamma2`, each entry costs `2 r`.
    pub fn apply(&self, gamma: &TangentCoefficients) -> Vec<f64> {
        let r = self.rank();
        let mut out = vec![0.0; self.m()];
        if r == 0 {
            return out;
        }
        // a = Gamma1 V^T + Gamma2, r x d2, column-major so a.col(j) is contiguous.
        let a = &gamma.gamma1 * self.v.transpose() + &gamma.gamma2;
        let g3_rows = to_row_major(&gamma.gamma3);
        for (o, &(i, j)) in out.iter_mut().zip(&self.entries) {
            let (i, j) = (i as usize, j as usize);
            let ur = &self.u_rows[i * r..(i + 1) * r];
            let vr = &self.v_rows[j * r..(j + 1) * r];
            let g3r = &g3_rows[i * r..(i + 1) * r];
            let acol = a.column(j);
            let mut acc = 0.0;
            for k in 0..r {
                acc += ur[k] * acol[k] + g3r[k] * vr[k];
            }
            *o = acc;
        }
        out
    }

    /// `P_T^* P_Omega^*(v)`: scatters `v` into `r`-dimensional row/column
    /// accumulators, then projects onto the constraint set exactly as the
    /// adjoint formula dictates.
    pub fn adjoint(&self, w: &[f64]) -> TangentCoefficients {
        let r = self.rank();
        if r == 0 {
            return TangentCoefficients::zeros(self.d1, self.d2, 0);
        }
        // row_acc = U^T P_Omega^*(w), r x d2; col_acc = P_Omega^*(w) V, d1 x r.
        let mut row_acc = DMatrix::zeros(r, self.d2);
        let mut col_rows = vec![0.0; self.d1 * r];
        for (&wl, &(i, j)) in w.iter().zip(&self.entries) {
            if wl != 0.0 {
                let (i, j) = (i as usize, j as usize);
                let ur = &self.u_rows[i * r..(i + 1) * r];
                let vr = &self.v_rows[j * r..(j + 1) * r];
                let mut col = row_acc.column_mut(j);
                for (c, &u) in col.iter_mut().zip(ur) {
                    *c += wl * u;
                }
                let row = &mut col_rows[i * r..(i + 1) * r];
                for (c, &v) in row.iter_mut().zip(vr) {
                    *c += wl * v;
                }
            }
        }
        let mut col_acc = DMatrix::zeros(self.d1, r);
        for i in 0..self.d1 {
            for k in 0..r {
                col_acc[(i, k)] = col_rows[i * r + k];
            }
        }
        let gamma1 = &row_acc * &self.v;
        let gamma2 = row_acc - &gamma1 * self.v.transpose();
        let gamma3 = col_acc - &self.u * &gamma1;
        TangentCoefficients {
            gamma1,
            gamma2,
            gamma3,
        }
    }
}

/// `P_Omega P_T (gamma)` as a standalone call; see [`OmegaTangentKernel`].
pub fn omega_tangent_apply(
    gamma: &TangentCoefficients,
    basis: &TangentBasis,
    pattern: &SamplingPattern,
) -> Result<Vec<f64>, OperatorError> {
    check_dims(gamma, basis)?;
    Ok(OmegaTangentKernel::new(basis, pattern)?.apply(gamma))
}

/// `P_T^* P_Omega^*(v)` as a standalone call; see [`OmegaTangentKernel`].
pub fn omega_tangent_adjoint(
    v: &[f64],
    basis: &TangentBasis,
    pattern: &SamplingPattern,
) -> Result<TangentCoefficients, OperatorError> {
    if v.len() != pattern.len() {
        return Err(OperatorError::DimensionMismatch(format!(
            "vector length {} does not match m = {}",
            v.len(),
            pattern.len()
        )));
    }
    Ok(OmegaTangentKernel::new(basis, pattern)?.adjoint(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(d1: usize, d2: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn orthonormal(d: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        gaussian(d, r, rng).qr().q()
    }

    fn full_pattern(d1: usize, d2: usize) -> Arc<SamplingPattern> {
        let entries = (0..d1 as u32)
            .flat_map(|i| (0..d2 as u32).map(move |j| (i, j)))
            .collect();
        Arc::new(SamplingPattern::new(d1, d2, entries).unwrap())
    }

    fn random_basis(d1: usize, d2: usize, r: usize, seed: u64) -> TangentBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TangentBasis::new(orthonormal(d1, r, &mut rng), orthonormal(d2, r, &mut rng)).unwrap()
    }

    fn random_constrained_gamma(basis: &TangentBasis, seed: u64) -> TangentCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = basis.rank();
        let mut gamma = TangentCoefficients {
            gamma1: gaussian(r, r, &mut rng),
            gamma2: gaussian(r, basis.d2(), &mut rng),
            gamma3: gaussian(basis.d1(), r, &mut rng),
        };
        gamma.project_constraints(basis);
        gamma
    }

    #[test]
    fn pattern_rejects_duplicates_and_out_of_range() {
        assert!(matches!(
            SamplingPattern::new(3, 3, vec![(0, 0), (0, 0)]),
            Err(OperatorError::DuplicateIndex { .. })
        ));
        assert!(matches!(
            SamplingPattern::new(3, 3, vec![(3, 0)]),
            Err(OperatorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_operator_maps_to_zero() {
        let pattern = full_pattern(4, 5);
        let x = SparsePlusLowRank::zero(pattern);
        let out = x.matvec(&[1.0; 5]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let out = x.rmatvec(&[1.0; 4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_outer_product_action() {
        // residual = 0, U_left = e1, M1 = e1: X = e1 e1^T.
        let pattern = full_pattern(4, 4);
        let mut e1_left = DMatrix::zeros(4, 1);
        e1_left[(0, 0)] = 1.0;
        let mut e1_right = DMatrix::zeros(4, 1);
        e1_right[(0, 0)] = 1.0;
        let x = SparsePlusLowRank::from_parts(
            pattern,
            vec![0.0; 16],
            e1_left,
            e1_right,
            DMatrix::zeros(4, 0),
            DMatrix::zeros(4, 0),
        )
        .unwrap();
        let mut z = vec![0.0; 4];
        z[0] = 1.0;
        let out = x.matvec(&z).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_matches_dense_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d1, d2) = (30, 40);
        let entries: Vec<(u32, u32)> = {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < 200 {
                set.insert((rng.random_range(0..d1 as u32), rng.random_range(0..d2 as u32)));
            }
            set.into_iter().collect()
        };
        let pattern = Arc::new(SamplingPattern::new(d1, d2, entries).unwrap());
        let x = SparsePlusLowRank::from_parts(
            pattern.clone(),
            (0..200).map(|_| rng.sample(StandardNormal)).collect(),
            gaussian(d1, 3, &mut rng),
            gaussian(d2, 3, &mut rng),
            gaussian(d1, 3, &mut rng),
            gaussian(d2, 3, &mut rng),
        )
        .unwrap();
        let dense = x.to_dense().unwrap();
        let z: Vec<f64> = (0..d2).map(|_| rng.sample(StandardNormal)).collect();
        let got = DVector::from_vec(x.matvec(&z).unwrap());
        let want = &dense * DVector::from_vec(z);
        assert!((got - &want).norm() <= 1e-12 * want.norm().max(1.0));

        let z: Vec<f64> = (0..d1).map(|_| rng.sample(StandardNormal)).collect();
        let got = DVector::from_vec(x.rmatvec(&z).unwrap());
        let want = dense.transpose() * DVector::from_vec(z);
        assert!((got - &want).norm() <= 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn matvec_rejects_wrong_length() {
        let x = SparsePlusLowRank::zero(full_pattern(4, 5));
        assert!(x.matvec(&[0.0; 4]).is_err());
        assert!(x.rmatvec(&[0.0; 5]).is_err());
    }

    #[test]
    fn tangent_apply_zero_and_identity_block() {
        let basis = random_basis(6, 7, 2, 1);
        let pattern = full_pattern(6, 7);
        let zero = TangentCoefficients::zeros(6, 7, 2);
        let x = tangent_apply(&zero, &basis, &pattern).unwrap();
        assert!(x.to_dense().unwrap().norm() == 0.0);

        let mut gamma = TangentCoefficients::zeros(6, 7, 2);
        gamma.gamma1 = DMatrix::identity(2, 2);
        let x = tangent_apply(&gamma, &basis, &pattern).unwrap();
        let want = basis.u() * basis.v().transpose();
        assert!((x.to_dense().unwrap() - want).norm() < 1e-12);
    }

    #[test]
    fn tangent_apply_rejects_constraint_violation() {
        let basis = random_basis(6, 7, 2, 2);
        let pattern = full_pattern(6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gamma = TangentCoefficients {
            gamma1: gaussian(2, 2, &mut rng),
            gamma2: gaussian(2, 7, &mut rng),
            gamma3: gaussian(6, 2, &mut rng),
        };
        assert!(matches!(
            tangent_apply(&gamma, &basis, &pattern),
            Err(OperatorError::ConstraintViolation(_))
        ));
    }

    #[test]
    fn tangent_adjoint_of_basis_product_is_identity_block() {
        let basis = random_basis(9, 8, 3, 4);
        let pattern = full_pattern(9, 8);
        let mut gamma = TangentCoefficients::zeros(9, 8, 3);
        gamma.gamma1 = DMatrix::identity(3, 3);
        let z = tangent_apply(&gamma, &basis, &pattern).unwrap();
        let back = tangent_adjoint(&z, &basis).unwrap();
        assert!((back.gamma1.clone() - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!(back.gamma2.norm() < 1e-12);
        assert!(back.gamma3.norm() < 1e-12);
    }

    #[test]
    fn adjoint_outputs_satisfy_constraints() {
        let basis = random_basis(20, 30, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let entries: Vec<(u32, u32)> = {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < 150 {
                set.insert((rng.random_range(0..20u32), rng.random_range(0..30u32)));
            }
            set.into_iter().collect()
        };
        let pattern = Arc::new(SamplingPattern::new(20, 30, entries).unwrap());
        let v: Vec<f64> = (0..150).map(|_| rng.sample(StandardNormal)).collect();
        let gamma = omega_tangent_adjoint(&v, &basis, &pattern).unwrap();
        let (g2v, ug3) = gamma.constraint_residuals(&basis);
        let scale = gamma.norm();
        assert!(g2v <= 1e-10 * scale.max(1.0));
        assert!(ug3 <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn omega_tangent_apply_full_pattern_is_vectorization() {
        let basis = random_basis(5, 6, 2, 9);
        let pattern = full_pattern(5, 6);
        let mut gamma = TangentCoefficients::zeros(5, 6, 2);
        gamma.gamma1 = DMatrix::identity(2, 2);
        let out = omega_tangent_apply(&gamma, &basis, &pattern).unwrap();
        let dense = basis.u() * basis.v().transpose();
        for (&(i, j), &o) in pattern.entries().iter().zip(&out) {
            assert!((o - dense[(i as usize, j as usize)]).abs() < 1e-13);
        }
    }

    #[test]
    fn kernel_apply_and_adjoint_are_adjoint_pair() {
        let basis = random_basis(20, 30, 3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let entries: Vec<(u32, u32)> = {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < 200 {
                set.insert((rng.random_range(0..20u32), rng.random_range(0..30u32)));
            }
            set.into_iter().collect()
        };
        let pattern = Arc::new(SamplingPattern::new(20, 30, entries).unwrap());
        let kernel = OmegaTangentKernel::new(&basis, &pattern).unwrap();
        let gamma = random_constrained_gamma(&basis, 12);
        let w: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let lhs: f64 = kernel
            .apply(&gamma)
            .iter()
            .zip(&w)
            .map(|(a, b)| a * b)
            .sum();
        let rhs = gamma.dot(&kernel.adjoint(&w));
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0),
            "adjointness broke: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn single_entry_adjoint_matches_structural_adjoint() {
        let basis = random_basis(12, 10, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let entries: Vec<(u32, u32)> = {
            let mut set = std::collections::BTreeSet::new();
            while set.len() < 40 {
                set.insert((rng.random_range(0..12u32), rng.random_range(0..10u32)));
            }
            set.into_iter().collect()
        };
        let pattern = Arc::new(SamplingPattern::new(12, 10, entries).unwrap());
        let mut v = vec![0.0; 40];
        v[17] = 1.0;
        let got = omega_tangent_adjoint(&v, &basis, &pattern).unwrap();

        let single = SparsePlusLowRank::from_parts(
            pattern.clone(),
            v,
            DMatrix::zeros(12, 0),
            DMatrix::zeros(10, 0),
            DMatrix::zeros(12, 0),
            DMatrix::zeros(10, 0),
        )
        .unwrap();
        let want = tangent_adjoint(&single, &basis).unwrap();
        assert!((got.gamma1.clone() - want.gamma1).norm() < 1e-13);
        assert!((got.gamma2.clone() - want.gamma2).norm() < 1e-13);
        assert!((got.gamma3.clone() - want.gamma3).norm() < 1e-13);
    }

    #[test]
    fn frobenius_distance_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pattern = full_pattern(10, 9);
        let mk = |rng: &mut ChaCha8Rng| {
            SparsePlusLowRank::from_parts(
                pattern.clone(),
                (0..90).map(|_| rng.sample(StandardNormal)).collect(),
                gaussian(10, 2, rng),
                gaussian(9, 2, rng),
                gaussian(10, 2, rng),
                gaussian(9, 2, rng),
            )
            .unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let want = (a.to_dense().unwrap() - b.to_dense().unwrap()).norm();
        let got = a.frobenius_distance(&b).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        assert!((a.frobenius_norm() - a.to_dense().unwrap().norm()).abs() < 1e-12);
    }

    #[test]
    fn distance_of_identical_iterates_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let pattern = full_pattern(12, 12);
        let x = SparsePlusLowRank::from_parts(
            pattern.clone(),
            (0..144).map(|_| rng.sample(StandardNormal)).collect(),
            gaussian(12, 3, &mut rng),
            gaussian(12, 3, &mut rng),
            gaussian(12, 3, &mut rng),
            gaussian(12, 3, &mut rng),
        )
        .unwrap();
        let d = x.frobenius_distance(&x.clone()).unwrap();
        assert!(d <= 1e-13 * x.frobenius_norm());
    }

    #[test]
    fn dense_gate_refuses_large_instances() {
        let entries = vec![(0, 0)];
        let pattern = Arc::new(SamplingPattern::new(100, 100, entries).unwrap());
        let x = SparsePlusLowRank::zero(pattern);
        assert!(matches!(x.to_dense(), Err(OperatorError::TooLargeForDense)));
    }
}
