//! Small dense helpers on top of nalgebra: symmetric PSD square roots and
//! conversions between row-major `Vec<Vec<f64>>` and `DMatrix`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below `-PSD_TOL * max(1, |λ|max)` mean the matrix is not PSD.
pub const PSD_TOL: f64 = 1e-9;

pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn psd_tolerance(eigenvalues: &[f64]) -> f64 {
    let scale = eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    PSD_TOL * scale
}

/// Smallest eigenvalue of the symmetric part of `m` (`0` for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric PSD matrix.
///
/// Negative eigenvalues within tolerance are clipped to zero; anything more
/// negative is rejected with `NonPSDCovariance`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let tol = psd_tolerance(&values);
    let mut roots = Vec::with_capacity(values.len());
    for &v in &values {
        if v < -tol {
            return Err(Error::NonPSDCovariance(v));
        }
        roots.push(v.max(0.0).sqrt());
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(roots));
    let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(symmetrize(&root))
}

/// Frobenius norm.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let r = psd_sqrt(&m).unwrap();
        assert_relative_eq!(r[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r[(1, 1)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(r[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 1.0]);
        let r = psd_sqrt(&m).unwrap();
        let back = &r * &r;
        for (a, b) in back.iter().zip(m.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_psd_is_accepted() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = psd_sqrt(&m).unwrap();
        let back = &r * &r;
        for (a, b) in back.iter().zip(m.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(psd_sqrt(&m), Err(Error::NonPSDCovariance(_))));
    }

    #[test]
    fn frobenius_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_relative_eq!(frobenius(&m), 5.0, epsilon = 1e-15);
    }
}
