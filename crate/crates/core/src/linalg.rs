//! Dense linear algebra kernels.
//!
//! Everything here works on [`DenseMatrix`], a row-major `f64` matrix. The
//! decompositions are written out directly: one-sided Jacobi for the SVD,
//! Householder tridiagonalisation followed by implicit QL for symmetric
//! eigenproblems, and Cholesky for shifted normal equations. Matrix products
//! go through `matrixmultiply`'s blocked GEMM.

use std::fmt;

use thiserror::Error;

/// Relative cutoff below which singular values (or eigenvalues of a
/// symmetric positive semidefinite matrix) are treated as zero.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Tolerance used when checking that a normal-equation matrix is symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 80;
const QL_MAX_ITERATIONS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: input contains non-finite entries")]
    NonFinite { op: &'static str },
    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },
    #[error("matrix is not symmetric: max |g_ij - g_ji| = {deviation:e} exceeds {tolerance:e}")]
    Asymmetric { deviation: f64, tolerance: f64 },
    #[error("regularization must be finite and nonnegative, got {0}")]
    InvalidRegularization(f64),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for v in self.row(i).iter().take(8) {
                write!(f, "{v:>12.5e} ")?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                op: "DenseMatrix::new",
                expected: format!("{} entries ({rows}x{cols})", rows * cols),
                found: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    /// Leading `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        assert!(k <= self.cols);
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul: inner dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            1.0,
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            0.0,
            (&mut out.data, other.cols, 1),
        );
        out
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn tr_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "tr_matmul: row count mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            1.0,
            (&self.data, 1, self.cols),
            (&other.data, other.cols, 1),
            0.0,
            (&mut out.data, other.cols, 1),
        );
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_tr(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_tr: column count mismatch");
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            1.0,
            (&self.data, self.cols, 1),
            (&other.data, 1, other.cols),
            0.0,
            (&mut out.data, other.rows, 1),
        );
        out
    }

    /// Gram matrix `selfᵀ · self`, exactly symmetric.
    pub fn gram(&self) -> Self {
        let mut g = self.tr_matmul(self);
        let n = g.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = g.data[i * n + j];
                g.data[j * n + i] = v;
            }
        }
        g
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_matvec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi != 0.0 {
                axpy(*yi, self.row(i), &mut out);
            }
        }
        out
    }

    /// Largest `|g_ij - g_ji|` for a square matrix.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut dev = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                dev = dev.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        dev
    }
}

type StridedRef<'a> = (&'a [f64], usize, usize);
type StridedMut<'a> = (&'a mut [f64], usize, usize);

/// `c ← α·a·b + β·c` for strided operands of logical shapes m×k, k×n, m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: StridedRef<'_>,
    b: StridedRef<'_>,
    beta: f64,
    c: StridedMut<'_>,
) {
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.0.len() >= extent(m, k, a.1, a.2), "gemm: lhs too short");
    assert!(b.0.len() >= extent(k, n, b.1, b.2), "gemm: rhs too short");
    assert!(c.0.len() >= extent(m, n, c.1, c.2), "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    // scaled accumulation to avoid overflow on large residual vectors
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * ss.sqrt()
}

/// Thin singular value decomposition `a = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let k = self.s.len();
        let us = DenseMatrix::from_fn(self.u.rows(), k, |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul_tr(&self.v)
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.s.truncate(k);
        self.u = self.u.leading_columns(k);
        self.v = self.v.leading_columns(k);
        self
    }
}

/// Thin SVD with `k = min(rows, cols)` by one-sided Jacobi rotations.
pub fn svd(a: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty { op: "svd" });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite { op: "svd" });
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(SvdResult {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    svd_tall(a)
}

/// Rank-`r` truncation of [`svd`]. The effective rank, `r` clamped to
/// `min(rows, cols)` and to the number of nonzero singular values, is returned
/// alongside the factors. It is 0 only for the zero matrix.
pub fn truncated_svd(a: &DenseMatrix, r: usize) -> Result<(SvdResult, usize), LinalgError> {
    let full = svd(a)?;
    let nonzero = full.s.iter().filter(|s| **s > 0.0).count();
    let effective = r.max(1).min(nonzero);
    Ok((full.truncate(effective), effective))
}

/// Number of singular values above `rtol · σ_max`.
pub fn numerical_rank(a: &DenseMatrix, rtol: f64) -> Result<usize, LinalgError> {
    let s = svd(a)?.s;
    let cutoff = rtol * s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|v| **v > cutoff).count())
}

// rows >= cols
fn svd_tall(a: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    let (n, m) = a.shape();
    // column-major working copies: column j of A lives in work[j*n..(j+1)*n]
    let mut work = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            work[j * n + i] = a.get(i, j);
        }
    }
    let mut vcols = vec![0.0; m * m];
    for j in 0..m {
        vcols[j * m + j] = 1.0;
    }

    let tol = f64::EPSILON * (n as f64).sqrt();
    let mut converged = m == 1;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m.saturating_sub(1) {
            for q in (p + 1)..m {
                let (alpha, beta, gamma) = {
                    let cp = &work[p * n..(p + 1) * n];
                    let cq = &work[q * n..(q + 1) * n];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut work, n, p, q, c, s);
                rotate_pair(&mut vcols, m, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            routine: "one-sided Jacobi SVD",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let mut sigma: Vec<(f64, usize)> = (0..m)
        .map(|j| (norm2(&work[j * n..(j + 1) * n]), j))
        .collect();
    sigma.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let smax = sigma[0].0;
    let zero_floor = smax * f64::EPSILON * n as f64;

    let mut u = DenseMatrix::zeros(n, m);
    let mut v = DenseMatrix::zeros(m, m);
    let mut s = Vec::with_capacity(m);
    let mut deficient = Vec::new();
    for (k, &(sv, j)) in sigma.iter().enumerate() {
        for i in 0..m {
            v.set(i, k, vcols[j * m + i]);
        }
        if sv > zero_floor && sv > 0.0 {
            for i in 0..n {
                u.set(i, k, work[j * n + i] / sv);
            }
            s.push(sv);
        } else {
            s.push(0.0);
            deficient.push(k);
        }
    }
    if !deficient.is_empty() {
        complete_orthonormal(&mut u, &deficient);
    }
    Ok(SvdResult { u, s, v })
}

fn rotate_pair(cols: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column, by Gram–Schmidt over the standard basis.
fn complete_orthonormal(u: &mut DenseMatrix, missing: &[usize]) {
    let (n, k) = u.shape();
    let mut filled: Vec<usize> = (0..k).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &target in missing {
        loop {
            assert!(candidate < n, "cannot complete orthonormal basis");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let col = u.column(j);
                    let proj = dot(&col, &e);
                    axpy(-proj, &col, &mut e);
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                for x in &mut e {
                    *x /= nrm;
                }
                u.set_column(target, &e);
                filled.push(target);
                break;
            }
        }
    }
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues in ascending order
/// and the matching orthonormal eigenvectors as columns.
pub fn symmetric_eigen(g: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix), LinalgError> {
    let n = g.rows();
    if n == 0 {
        return Err(LinalgError::Empty {
            op: "symmetric_eigen",
        });
    }
    if g.cols() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "symmetric_eigen",
            expected: "square matrix".into(),
            found: format!("{}x{}", g.rows(), g.cols()),
        });
    }
    if !g.is_finite() {
        return Err(LinalgError::NonFinite {
            op: "symmetric_eigen",
        });
    }
    let mut v = g.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    // QL rotations act on eigenvector columns; keep them contiguous
    let mut vt = v.transpose();
    tql2(&mut vt, &mut d, &mut e)?;
    Ok((d, vt.transpose()))
}

// Householder reduction to tridiagonal form (after the EISPACK routine).
fn tred2(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v.get(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
                v.set(j, i, 0.0);
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut gg = h.sqrt();
            if f > 0.0 {
                gg = -gg;
            }
            e[i] = scale * gg;
            h -= f * gg;
            d[i - 1] = f - gg;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v.set(j, i, f);
                gg = e[j] + v.get(j, j) * f;
                for k in (j + 1)..i {
                    gg += v.get(k, j) * d[k];
                    e[k] += v.get(k, j) * f;
                }
                e[j] = gg;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                gg = e[j];
                for k in j..i {
                    let val = v.get(k, j) - (f * e[k] + gg * d[k]);
                    v.set(k, j, val);
                }
                d[j] = v.get(i - 1, j);
                v.set(i, j, 0.0);
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        let last = v.get(i, i);
        v.set(n - 1, i, last);
        v.set(i, i, 1.0);
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v.get(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut gg = 0.0;
                for k in 0..=i {
                    gg += v.get(k, i + 1) * v.get(k, j);
                }
                for k in 0..=i {
                    let val = v.get(k, j) - gg * d[k];
                    v.set(k, j, val);
                }
            }
        }
        for k in 0..=i {
            v.set(k, i + 1, 0.0);
        }
    }
    for j in 0..n {
        d[j] = v.get(n - 1, j);
        v.set(n - 1, j, 0.0);
    }
    v.set(n - 1, n - 1, 1.0);
    e[0] = 0.0;
}

// Implicit QL on the tridiagonal form, accumulating into the rows of `vt`
// (eigenvectors stored as rows); sorts ascending.
fn tql2(vt: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) -> Result<(), LinalgError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITERATIONS {
                    return Err(LinalgError::NoConvergence {
                        routine: "tridiagonal QL",
                        iterations: QL_MAX_ITERATIONS,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.data.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let vk = *a;
                        let vk1 = *b;
                        *b = s * vk + c * vk1;
                        *a = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // selection sort keeps eigenvector columns aligned
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, dj) in d.iter().enumerate().skip(i + 1) {
            if *dj < p {
                k = j;
                p = *dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for col in 0..n {
                vt.data.swap(i * n + col, k * n + col);
            }
        }
    }
    Ok(())
}

/// In-place Cholesky factor `g = L·Lᵀ`; returns `None` if a pivot is not
/// strictly positive.
pub fn cholesky(g: &DenseMatrix) -> Option<DenseMatrix> {
    let n = g.rows();
    let mut l = g.clone();
    for j in 0..n {
        let mut diag = l.get(j, j);
        {
            let rj = &l.data[j * n..j * n + j];
            diag -= dot(rj, rj);
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l.data[j * n + j] = ljj;
        for i in (j + 1)..n {
            let (upper, lower) = l.data.split_at_mut(i * n);
            let rj = &upper[j * n..j * n + j];
            let ri = &lower[..j];
            let val = (lower[j] - dot(ri, rj)) / ljj;
            lower[j] = val;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            l.data[i * n + j] = 0.0;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &y[..i]);
        y[i] = (y[i] - s) / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// Which route produced a normal-equation solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalSolveMethod {
    Cholesky,
    PseudoInverse,
}

#[derive(Debug, Clone)]
pub struct NormalSolution {
    pub x: Vec<f64>,
    pub method: NormalSolveMethod,
    /// Numerical rank of the (shifted) system.
    pub rank: usize,
    /// Cheap estimate of the 2-norm condition number of the shifted system;
    /// for the pseudo-inverse route this is the ratio over retained modes.
    pub condition_estimate: f64,
}

/// Solves `(g + λI)·x = b` for symmetric `g`.
///
/// With `λ > 0` the shifted system is factored by Cholesky. With `λ = 0`, or
/// if the shifted matrix is not numerically positive definite, the
/// minimum-norm solution is taken from the eigen-decomposition with modes
/// below `PINV_RELATIVE_CUTOFF · |μ|_max` discarded.
pub fn solve_normal_system(
    g: &DenseMatrix,
    b: &[f64],
    lambda: f64,
) -> Result<NormalSolution, LinalgError> {
    let n = g.rows();
    if g.cols() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "solve_regularized_normal",
            expected: "square matrix".into(),
            found: format!("{}x{}", g.rows(), g.cols()),
        });
    }
    if b.len() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "solve_regularized_normal",
            expected: format!("rhs of length {n}"),
            found: format!("length {}", b.len()),
        });
    }
    if n == 0 {
        return Err(LinalgError::Empty {
            op: "solve_regularized_normal",
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(LinalgError::InvalidRegularization(lambda));
    }
    if !g.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            op: "solve_regularized_normal",
        });
    }
    let tolerance = SYMMETRY_TOLERANCE * g.max_abs().max(1.0);
    let deviation = g.asymmetry();
    if deviation > tolerance {
        return Err(LinalgError::Asymmetric {
            deviation,
            tolerance,
        });
    }

    let mut shifted = g.clone();
    for i in 0..n {
        // average away round-off level asymmetry
        for j in (i + 1)..n {
            let avg = 0.5 * (shifted.data[i * n + j] + shifted.data[j * n + i]);
            shifted.data[i * n + j] = avg;
            shifted.data[j * n + i] = avg;
        }
        shifted.data[i * n + i] += lambda;
    }

    if lambda > 0.0 {
        if let Some(l) = cholesky(&shifted) {
            let x = cholesky_solve(&l, b);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
            for i in 0..n {
                let d = l.get(i, i);
                lo = lo.min(d);
                hi = hi.max(d);
            }
            return Ok(NormalSolution {
                x,
                method: NormalSolveMethod::Cholesky,
                rank: n,
                condition_estimate: (hi / lo).powi(2),
            });
        }
    }

    let (mu, q) = symmetric_eigen(&shifted)?;
    let mu_max = mu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = PINV_RELATIVE_CUTOFF * mu_max;
    let qtb = q.tr_matvec(b);
    let mut coef = vec![0.0; n];
    let mut rank = 0;
    let mut mu_min_kept = f64::INFINITY;
    for k in 0..n {
        if mu[k].abs() > cutoff && mu_max > 0.0 {
            coef[k] = qtb[k] / mu[k];
            rank += 1;
            mu_min_kept = mu_min_kept.min(mu[k].abs());
        }
    }
    let x = q.matvec(&coef);
    Ok(NormalSolution {
        x,
        method: NormalSolveMethod::PseudoInverse,
        rank,
        condition_estimate: if rank > 0 { mu_max / mu_min_kept } else { f64::INFINITY },
    })
}

/// Solution vector of [`solve_normal_system`].
pub fn solve_regularized_normal(
    g: &DenseMatrix,
    b: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, LinalgError> {
    solve_normal_system(g, b, lambda).map(|s| s.x)
}

/// `min_x ‖a·x − b‖₂` and the numerical rank of `a`, from a Householder QR
/// with column pivoting.
///
/// Elimination stops once the largest remaining column norm falls below
/// `rtol` times the first pivot, so exactly dependent columns do not pick up
/// round-off directions. The residual is read off `Qᵀb` directly, which keeps
/// it accurate when `a` is too ill-conditioned for the normal equations.
pub fn lstsq_residual(a: &DenseMatrix, b: &[f64], rtol: f64) -> Result<(f64, usize), LinalgError> {
    let (n, m) = a.shape();
    if b.len() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "lstsq_residual",
            expected: format!("rhs of length {n}"),
            found: format!("length {}", b.len()),
        });
    }
    if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { op: "lstsq_residual" });
    }
    // column-major copy so each reflector works on contiguous memory
    let mut cols: Vec<Vec<f64>> = (0..m).map(|j| a.column(j)).collect();
    let mut rhs = b.to_vec();
    let mut first_pivot = 0.0;
    let mut rank = 0;
    for k in 0..n.min(m) {
        let (p, alpha) = (k..m)
            .map(|j| (j, norm2(&cols[j][k..])))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if k == 0 {
            first_pivot = alpha;
        }
        if alpha <= rtol * first_pivot || alpha == 0.0 {
            break;
        }
        cols.swap(k, p);
        let x = &cols[k][k..];
        let alpha = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        rank = k + 1;
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |y: &mut [f64]| {
            let f = 2.0 * dot(&v, y) / vnorm2;
            axpy(-f, &v, y);
        };
        for col in cols.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut rhs[k..]);
        cols[k][k] = alpha;
    }
    Ok((norm2(&rhs[rank..]), rank))
}

/// Minimum-norm least-squares solution of `a·x ≈ b` via the SVD of `a`.
pub fn lstsq_min_norm(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if b.len() != a.rows() {
        return Err(LinalgError::ShapeMismatch {
            op: "lstsq_min_norm",
            expected: format!("rhs of length {}", a.rows()),
            found: format!("length {}", b.len()),
        });
    }
    let f = svd(a)?;
    let cutoff = PINV_RELATIVE_CUTOFF * f.s.first().copied().unwrap_or(0.0);
    let utb = f.u.tr_matvec(b);
    let coef: Vec<f64> = f
        .s
        .iter()
        .zip(&utb)
        .map(|(s, c)| if *s > cutoff && *s > 0.0 { c / s } else { 0.0 })
        .collect();
    Ok(f.v.matvec(&coef))
}
