//! Dense complex matrices and the handful of decompositions the rest of the
//! crate needs.
//!
//! Matrices are stored row-major. Heavy decompositions (general eigenproblem,
//! SVD, Hermitian eigenproblem, LU) are delegated to `faer`; everything on
//! the hot path of a trajectory is plain loops over slices.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        Self::from_fn(n, m, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `|u><v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let brow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.rows];
        matvec_into(&self.data, self.cols, v, &mut out);
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hilbert-Schmidt inner product `Tr(self^dagger other)`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && (self - &self.dagger()).frobenius_norm() <= tol
    }

    /// Submatrix picking the given rows and columns, in order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |r, c| self[(rows[r], cols[c])])
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        let (m, n) = (rhs.rows, rhs.cols);
        Self::from_fn(self.rows * m, self.cols * n, |r, c| self[(r / m, c / n)] * rhs[(r % m, c % n)])
    }

    /// Column-stacking vectorization.
    pub fn vec_columns(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self[(r, c)]);
            }
        }
        out
    }

    /// Inverse of [`CMatrix::vec_columns`].
    pub fn unvec_columns(v: &[C64], rows: usize, cols: usize) -> Self {
        assert_eq!(v.len(), rows * cols);
        Self::from_fn(rows, cols, |r, c| v[c * rows + r])
    }

    pub(crate) fn to_faer(&self) -> Mat<C64> {
        Mat::from_fn(self.rows, self.cols, |r, c| self[(r, c)])
    }

    pub(crate) fn from_faer(m: MatRef<'_, C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

/// `out = M v` for a row-major `M` with `cols` columns.
#[inline]
pub fn matvec_into(m: &[C64], cols: usize, v: &[C64], out: &mut [C64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = ZERO;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o = acc;
    }
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    &a.matmul(b) - &b.matmul(a)
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Numerically stable `log(sum(exp(x)))`; `-inf` entries are ignored.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Eigenvalues of a Hermitian matrix (ascending) with orthonormal eigenvectors
/// as columns.
pub fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let fm = m.to_faer();
    let evd = fm
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("hermitian eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((vals, CMatrix::from_faer(evd.U())))
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    if m.rows() == 0 {
        return Ok(Vec::new());
    }
    m.to_faer().eigenvalues().map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))
}

/// Eigenvalues and right eigenvectors (as columns) of a general complex matrix.
pub fn eigen(m: &CMatrix) -> Result<(Vec<C64>, CMatrix)> {
    let evd = m.to_faer().eigen().map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i]).collect();
    Ok((vals, CMatrix::from_faer(evd.U())))
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    m.to_faer().singular_values().map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))
}

/// Full SVD `M = U diag(s) V^dagger`; returns `(U, s, V)`.
pub fn svd(m: &CMatrix) -> Result<(CMatrix, Vec<f64>, CMatrix)> {
    let svd = m.to_faer().svd().map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((CMatrix::from_faer(svd.U()), vals, CMatrix::from_faer(svd.V())))
}

/// Orthonormal basis (columns) of the numerical null space: right singular
/// vectors whose singular value is at most `rel_tol * sigma_max`.
pub fn null_space(m: &CMatrix, rel_tol: f64) -> Result<Vec<Vec<C64>>> {
    let (_, s, v) = svd(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let cut = rel_tol * smax.max(f64::MIN_POSITIVE);
    let n = m.cols();
    let mut basis = Vec::new();
    for k in 0..n {
        let sk = s.get(k).copied().unwrap_or(0.0);
        if sk <= cut {
            basis.push(v.column(k));
        }
    }
    Ok(basis)
}

/// Solves `M x = b` by LU with partial pivoting.
pub fn solve(m: &CMatrix, b: &[C64]) -> Vec<C64> {
    use faer::linalg::solvers::Solve;
    let lu = m.to_faer().partial_piv_lu();
    let rhs = Mat::from_fn(b.len(), 1, |r, _| b[r]);
    let x = lu.solve(&rhs);
    (0..b.len()).map(|r| x[(r, 0)]).collect()
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
/// Accurate to near machine precision for the moderate norms used in
/// validation work; not intended for the trajectory hot path.
pub fn expm(m: &CMatrix) -> CMatrix {
    assert!(m.is_square());
    let n = m.rows();
    let norm = m.frobenius_norm();
    let mut squarings = 0u32;
    let mut s = 1.0;
    while norm * s > 0.25 {
        s *= 0.5;
        squarings += 1;
    }
    let a = m.scale_real(s);
    let mut result = CMatrix::identity(n);
    let mut term = CMatrix::identity(n);
    for k in 1..=20 {
        term = term.matmul(&a).scale_real(1.0 / k as f64);
        result = &result + &term;
        if term.frobenius_norm() < 1e-18 * result.frobenius_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    result
}

/// Gram-Schmidt with re-orthogonalization; vectors whose residual norm falls
/// below `tol` are dropped.
pub fn orthonormalize(vectors: &[Vec<C64>], tol: f64) -> Vec<Vec<C64>> {
    let mut basis: Vec<Vec<C64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = inner(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let nrm = norm_sqr(&w).sqrt();
        if nrm > tol {
            for wi in &mut w {
                *wi /= nrm;
            }
            basis.push(w);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_x() -> CMatrix {
        CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    #[test]
    fn kron_and_vec_identity() {
        // vec(X rho Y) = (Y^T kron X) vec(rho)
        let x = CMatrix::from_fn(2, 2, |r, c| C64::new(r as f64 + 1.0, c as f64 - 0.5));
        let y = CMatrix::from_fn(3, 3, |r, c| C64::new((r * c) as f64, 1.0 + r as f64));
        let rho = CMatrix::from_fn(2, 3, |r, c| C64::new(r as f64 - c as f64, 0.3 * c as f64));
        let lhs = x.matmul(&rho).matmul(&y).vec_columns();
        let rhs = y.transpose().kron(&x).matvec(&rho.vec_columns());
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = CMatrix::unvec_columns(&rho.vec_columns(), 2, 3);
        assert_eq!(back, rho);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let t = 0.7;
        let e = expm(&pauli_x().scale(C64::new(0.0, -t)));
        assert!((e[(0, 0)] - C64::new(t.cos(), 0.0)).norm() < 1e-14);
        assert!((e[(0, 1)] - C64::new(0.0, -t.sin())).norm() < 1e-14);
    }

    #[test]
    fn hermitian_eigen_of_pauli_x() {
        let (vals, vecs) = hermitian_eigen(&pauli_x()).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let back = vecs.matmul(&CMatrix::real_diagonal(&vals)).matmul(&vecs.dagger());
        assert!((&back - &pauli_x()).frobenius_norm() < 1e-13);
    }

    #[test]
    fn null_space_of_projector() {
        let p = CMatrix::real_diagonal(&[1.0, 0.0, 1.0]);
        let ns = null_space(&p, 1e-12).unwrap();
        assert_eq!(ns.len(), 1);
        assert!((ns[0][1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_neg_infinity() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = logsumexp(&[f64::NEG_INFINITY, 0.0, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        // no overflow for huge magnitudes
        let v = logsumexp(&[-1e5, -1e5]);
        assert!((v - (-1e5 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn solve_small_system() {
        let m = CMatrix::from_real_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let x = solve(&m, &[C64::new(3.0, 0.0), C64::new(5.0, 0.0)]);
        assert!((x[0] - C64::new(0.8, 0.0)).norm() < 1e-14);
        assert!((x[1] - C64::new(1.4, 0.0)).norm() < 1e-14);
    }
}
