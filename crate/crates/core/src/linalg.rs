//! Small dense linear-algebra helpers over `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Iteration cap handed to the symmetric QR eigensolver, per dimension.
const EIGEN_ITERS_PER_DIM: usize = 30;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors as the matching columns.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let max_iter = EIGEN_ITERS_PER_DIM * n.max(1);
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, max_iter)
        .ok_or(Error::EigenNoConvergence { max_iter })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |row, col| eig.eigenvectors[(row, order[col])]);
    Ok((values, vectors))
}

/// Inverse of a symmetric positive-definite matrix, refusing matrices whose
/// condition number exceeds `max_condition`.
pub fn spd_inverse(m: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let (values, _) = sym_eigen_desc(m)?;
    let hi = values[0];
    let lo = values[values.len() - 1];
    if !(lo > 0.0) || hi / lo > max_condition {
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularGram { condition });
    }
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularGram { condition: hi / lo })
}

/// `‖a − b‖_F` projector distance between the column spans of two matrices
/// with orthonormal columns.
pub fn projector_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * a.transpose() - b * b.transpose()).norm()
}
