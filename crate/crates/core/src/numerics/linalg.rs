//! Dense least squares through the singular value decomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn rank_tolerance(m: &DMatrix<f64>, largest_singular: f64) -> f64 {
    (m.nrows().max(m.ncols()) as f64) * largest_singular * f64::EPSILON
}

/// Minimum-norm least-squares solution `M⁺ v`.
///
/// Singular values below `max(n, d) · σ_max · ε` are treated as zero, so
/// rank-deficient `M` yields the minimum-norm minimizer.
pub fn least_squares_apply(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} rows but vector has length {}",
            m.nrows(),
            v.len()
        )));
    }
    if m.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if m.nrows() == 0 {
        return Ok(DVector::zeros(m.ncols()));
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(m.ncols()));
    }
    let eps = rank_tolerance(m, smax);
    svd.solve(v, eps)
        .map_err(|e| Error::NumericalFailure(format!("least squares: {e}")))
}

/// Moore-Penrose pseudo-inverse.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let eps = rank_tolerance(m, smax);
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Numerical rank with the same tolerance as [`least_squares_apply`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let eps = rank_tolerance(m, smax);
    sv.iter().filter(|&&s| s > eps).count()
}
