//! Dense column-major matrices and the handful of linear-algebra primitives
//! the training and audit code needs.
//!
//! Every matrix stores its entries in column-major order, so `vec` is a
//! reinterpretation of the backing buffer. Extreme eigenvalues and singular
//! values go through `nalgebra`; spectral norms of matrices whose smaller
//! side exceeds [`DENSE_EIG_MAX_DIM`] use power iteration on `aᵀa`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NagError, Result};

/// Largest Gram side handled by a dense symmetric eigendecomposition in
/// [`spectral_norm`].
pub const DENSE_EIG_MAX_DIM: usize = 64;
pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_CAP: usize = 10_000;
/// Relative tolerance for the symmetry contract of [`sym_eig_extremes`].
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| format!("{:.6e}", self[(i, j)])).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from a column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NagError::dim("from_col_major", (rows, cols), (data.len(), 1)));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Row-by-row literal, handy in tests: `Matrix::from_rows(&[&[1., 2.], &[3., 4.]])`.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    /// Column-major entries.
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
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| s * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Entry-wise combination of two equally shaped matrices.
    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(NagError::dim("zip_with", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn try_add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b).map_err(|_| NagError::dim("add", self.shape(), other.shape()))
    }

    pub fn try_sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b).map_err(|_| NagError::dim("sub", self.shape(), other.shape()))
    }

    /// `I + self` for square matrices.
    pub fn plus_identity(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(NagError::dim("plus_identity", self.shape(), self.shape()));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.rows + i] += 1.0;
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(NagError::dim("matvec", self.shape(), (v.len(), 1)));
        }
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            axpy(vj, self.col(j), &mut out);
        }
        Ok(out)
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// Panicking operator forms for call sites where shapes are already known to
/// agree; fallible code should use [`matmul`], [`Matrix::try_add`] and friends.
impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        matmul(self, rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn try_add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector { data: self.data.iter().map(|x| s * x).collect() }
    }

    fn zip_with(&self, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(NagError::dim("vector op", (self.len(), 1), (other.len(), 1)));
        }
        Ok(Vector { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Column-first vectorization. Zero-copy apart from the clone.
pub fn vec(a: &Matrix) -> Vector {
    Vector { data: a.data.clone() }
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::from_col_major(rows, cols, v.data.clone())
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = a.shape();
    let (r, s) = b.shape();
    let mut out = Matrix::zeros(p * r, q * s);
    for ja in 0..q {
        for jb in 0..s {
            let out_col = ja * s + jb;
            let col = &mut out.data[out_col * p * r..(out_col + 1) * p * r];
            for ia in 0..p {
                let aij = a[(ia, ja)];
                if aij == 0.0 {
                    continue;
                }
                for (ib, &bij) in b.col(jb).iter().enumerate() {
                    col[ia * r + ib] = aij * bij;
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(NagError::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for j in 0..b.cols {
        let out_col = &mut out.data[j * a.rows..(j + 1) * a.rows];
        for (k, &bkj) in b.col(j).iter().enumerate() {
            if bkj != 0.0 {
                axpy(bkj, a.col(k), out_col);
            }
        }
    }
    Ok(out)
}

/// `W^{to:from} = W^to ⋯ W^from` with 1-based layer indices.
///
/// An empty range (`to < from`) yields the identity sized to the input
/// dimension of layer `from`, or the output dimension of layer `to` when
/// `from` is past the last layer.
pub fn chain_product(ws: &[Matrix], from: usize, to: usize) -> Result<Matrix> {
    if from == 0 {
        return Err(NagError::Contract("chain_product uses 1-based layer indices".into()));
    }
    if to < from {
        let n = if from <= ws.len() {
            ws[from - 1].cols
        } else if to >= 1 && to <= ws.len() {
            ws[to - 1].rows
        } else {
            return Err(NagError::Contract(format!(
                "empty chain ({from}, {to}) has no layer to size the identity"
            )));
        };
        return Ok(Matrix::identity(n));
    }
    if to > ws.len() {
        return Err(NagError::Contract(format!("chain end {to} beyond {} layers", ws.len())));
    }
    let mut acc = ws[from - 1].clone();
    for w in &ws[from..to] {
        acc = matmul(w, &acc)?;
    }
    Ok(acc)
}

pub fn frobenius_norm(a: &Matrix) -> f64 {
    l2_norm(&a.data)
}

/// Largest singular value.
///
/// Uses a dense symmetric eigendecomposition of the smaller Gram matrix when
/// `min(rows, cols) <= DENSE_EIG_MAX_DIM`, power iteration on `aᵀa`
/// otherwise. The power-iteration result is accurate to `tol · σ_max`.
pub fn spectral_norm(a: &Matrix, tol: f64) -> Result<f64> {
    if a.rows == 0 || a.cols == 0 {
        return Err(NagError::Contract("spectral_norm of an empty matrix".into()));
    }
    if a.rows.min(a.cols) <= DENSE_EIG_MAX_DIM {
        let g = small_gram(a);
        let (lmax, _) = dense_sym_extremes(&g);
        return Ok(lmax.max(0.0).sqrt());
    }
    power_iteration_top(a.cols, |x| {
        let ax = a.matvec(x).expect("shape checked");
        let mut out = vec![0.0; a.cols];
        for (j, o) in out.iter_mut().enumerate() {
            *o = a.col(j).iter().zip(&ax).map(|(p, q)| p * q).sum();
        }
        out
    }, tol)
    .map(|l| l.max(0.0).sqrt())
}

/// `(σ_max, σ_min)` over the `min(rows, cols)` singular values. A
/// rank-deficient input reports σ_min = 0 (or round-off) rather than erring.
pub fn singular_extremes(a: &Matrix) -> Result<(f64, f64)> {
    let sv = singular_values(a)?;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((max, min))
}

/// All `min(rows, cols)` singular values, descending.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows == 0 || a.cols == 0 {
        return Err(NagError::Contract("singular values of an empty matrix".into()));
    }
    let svd = nalgebra::linalg::SVD::new(a.to_nalgebra(), false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

/// Relative asymmetry `max|h - hᵀ| / max|h|`.
pub fn asymmetry(h: &Matrix) -> f64 {
    if h.rows != h.cols {
        return f64::INFINITY;
    }
    let scale = h.max_abs().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for j in 0..h.cols {
        for i in 0..j {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst / scale
}

/// `(λ_max, λ_min)` of a symmetric matrix.
pub fn sym_eig_extremes(h: &Matrix) -> Result<(f64, f64)> {
    if h.rows != h.cols || h.rows == 0 {
        return Err(NagError::Contract(format!("sym_eig_extremes needs a square matrix, got {:?}", h.shape())));
    }
    let asym = asymmetry(h);
    if asym > SYMMETRY_TOL {
        return Err(NagError::Contract(format!("matrix is not symmetric (relative asymmetry {asym:e})")));
    }
    Ok(dense_sym_extremes(h))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(h: &Matrix) -> Result<Vec<f64>> {
    sym_eig_extremes(h)?;
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(h.to_nalgebra()).eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn dense_sym_extremes(h: &Matrix) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(h.to_nalgebra());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

fn small_gram(a: &Matrix) -> Matrix {
    if a.cols <= a.rows {
        matmul(&a.transpose(), a).expect("conformable")
    } else {
        matmul(a, &a.transpose()).expect("conformable")
    }
}

/// Dominant eigenvalue of a symmetric positive semidefinite operator by power
/// iteration. Stops once the Rayleigh quotient changes by less than
/// `tol` relative.
pub fn power_iteration_top(dim: usize, apply: impl Fn(&[f64]) -> Vec<f64>, tol: f64) -> Result<f64> {
    // Deterministic, non-degenerate start vector.
    let mut x: Vec<f64> = (0..dim).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let n0 = l2_norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let mut lambda = 0.0;
    let mut delta = f64::INFINITY;
    for _ in 0..POWER_ITER_CAP {
        let y = apply(&x);
        let next: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ny = l2_norm(&y);
        if ny == 0.0 {
            return Ok(0.0);
        }
        delta = (next - lambda).abs();
        lambda = next;
        x = y.into_iter().map(|v| v / ny).collect();
        if delta <= tol * lambda.abs() {
            return Ok(lambda);
        }
    }
    Err(NagError::NoConvergence { op: "power_iteration", iterations: POWER_ITER_CAP, residual: delta })
}

/// Orthonormal basis for the column span of `a` (modified Gram-Schmidt with
/// one re-orthogonalization pass). Requires full column rank.
pub fn orthonormal_columns(a: &Matrix) -> Result<Matrix> {
    let (rows, cols) = a.shape();
    if cols > rows {
        return Err(NagError::dim("orthonormal_columns", a.shape(), a.shape()));
    }
    let mut q = a.clone();
    for j in 0..cols {
        for _pass in 0..2 {
            for k in 0..j {
                let (head, tail) = q.data.split_at_mut(j * rows);
                let qk = &head[k * rows..(k + 1) * rows];
                let qj = &mut tail[..rows];
                let dot: f64 = qk.iter().zip(qj.iter()).map(|(a, b)| a * b).sum();
                axpy(-dot, qk, qj);
            }
        }
        let col = &mut q.data[j * rows..(j + 1) * rows];
        let n = l2_norm(col);
        if n <= 1e-12 {
            return Err(NagError::Contract("orthonormal_columns: input is rank deficient".into()));
        }
        col.iter_mut().for_each(|v| *v /= n);
    }
    Ok(q)
}
