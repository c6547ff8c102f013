//! Small dense helpers shared by the model and the test statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::INFINITY,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mid - rad
        }
        _ => SymmetricEigen::new(m.clone()).eigenvalues.min(),
    }
}

/// Symmetric inverse square root via eigendecomposition. Returns the
/// smallest eigenvalue as the error value when it is not positive.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let eig = SymmetricEigen::new(m.clone());
    let smallest = eig.eigenvalues.min();
    if !(smallest > 0.0) {
        return Err(smallest);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(symmetrize(root))
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
pub fn inv_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| symmetrize(c.inverse()))
}

/// Lower-triangular `C` with `C Cᵀ = m` for a positive semidefinite `m`;
/// columns whose pivot is not positive (relative to the diagonal) are zero.
pub fn psd_cholesky(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut c = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let pivot = m[(j, j)] - c.row(j).columns(0, j).norm_squared();
        if pivot <= 1e-14 * scale {
            continue;
        }
        let d = pivot.sqrt();
        c[(j, j)] = d;
        for i in (j + 1)..n {
            let dot = c.row(i).columns(0, j).dot(&c.row(j).columns(0, j));
            c[(i, j)] = (m[(i, j)] - dot) / d;
        }
    }
    c
}

/// Averages a matrix with its transpose so the result is exactly symmetric.
pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Ratio of smallest to largest singular value (0 for an empty matrix).
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Relative Frobenius distance `|a - b| / max(|b|, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
