use nalgebra::{DMatrix, SymmetricEigen};

use super::Matrix;
use crate::error::{Error, Result};

/// Eigendecomposition `M = U diag(values) Uᵀ` of a symmetric matrix.
/// Columns of `vectors` are orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-9;

pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::NotSymmetric(format!("{}x{} matrix", n, m.cols())));
    }
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric("eigendecomposition input".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let dm = DMatrix::from_row_slice(n, n, m.data());
    let eig = SymmetricEigen::new(dm);
    let vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)]);
    Ok(SymEigen {
        values: eig.eigenvalues.iter().copied().collect(),
        vectors,
    })
}

/// Clamps round-off negatives to zero; fails if any eigenvalue is below
/// `-tol * max(1, largest |eigenvalue|)`.
pub(crate) fn clamp_psd(values: &mut [f64], tol: f64) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in values.iter_mut() {
        if *v < -tol * scale {
            return Err(Error::NegativeEigenvalue(*v));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(())
}
