//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

/// General inverse via LU.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix", m.nrows(), m.ncols())))
}

/// Symmetric square root and inverse square root through one eigendecomposition.
/// Fails when the smallest eigenvalue is not strictly positive.
pub fn sym_sqrt_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if eig.eigenvalues.iter().any(|&v| v <= max * 1e-14 || v <= 0.0) {
        return Err(Error::Singular("matrix square root of a non positive-definite matrix".into()));
    }
    let root = DVector::from_iterator(m.nrows(), eig.eigenvalues.iter().map(|v| v.sqrt()));
    let inv_root = root.map(|v| 1.0 / v);
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&root) * q.transpose();
    let inv_sqrt = q * DMatrix::from_diagonal(&inv_root) * q.transpose();
    Ok((sqrt, inv_sqrt))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with mass on every coordinate
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// ℓ1 → ℓ1 operator norm: the largest column ℓ1 norm.
pub fn l1_operator_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// (1/k) Σ xᵢxᵢᵀ over the given rows of `x`.
pub fn gram_rows(x: &DMatrix<f64>, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let k = rows.len();
    let p = x.ncols();
    if k == 0 {
        return DMatrix::zeros(p, p);
    }
    let block = x.rows(rows.start, k);
    (block.transpose() * block) / k as f64
}

/// Checks that a matrix is square and symmetric up to a relative tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}
