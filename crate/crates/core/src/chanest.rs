//! Least-squares sensing-channel estimation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChanEstError {
    #[error("shape mismatch: Y is {y:?}, X is {x:?}")]
    ShapeMismatch { y: (usize, usize), x: (usize, usize) },
    #[error("X Xᴴ is singular (condition estimate {condition:e}); use a positive ridge")]
    Singular { condition: f64 },
    #[error("ridge must be finite and >= 0, got {0}")]
    InvalidRidge(f64),
}

#[derive(Debug, Clone)]
pub struct EstimatedChannel {
    pub h_est: DMatrix<Complex64>,
    /// Condition number of `X Xᴴ` (before regularization).
    pub cond_estimate: f64,
    /// Ridge actually applied.
    pub ridge: f64,
}

/// Condition number above which unregularized estimation is refused.
const SINGULAR_CONDITION: f64 = 1e14;
/// Condition number above which [`ls_estimate_auto`] switches the ridge on.
pub const AUTO_RIDGE_CONDITION: f64 = 1e10;
/// Auto ridge relative to the mean eigenvalue `trace(X Xᴴ)/N_b`.
pub const AUTO_RIDGE_SCALE: f64 = 1e-8;

fn gram_condition(gram: &DMatrix<Complex64>) -> f64 {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `H_est = Y Xᴴ (X Xᴴ + ridge·I)⁻¹`.
pub fn ls_estimate(
    y: &DMatrix<Complex64>,
    x: &DMatrix<Complex64>,
    ridge: f64,
) -> Result<EstimatedChannel, ChanEstError> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(ChanEstError::InvalidRidge(ridge));
    }
    if y.ncols() != x.ncols() {
        return Err(ChanEstError::ShapeMismatch {
            y: y.shape(),
            x: x.shape(),
        });
    }
    let n_b = x.nrows();
    let xh = x.adjoint();
    let gram = x * &xh;
    let cond = gram_condition(&gram);
    if ridge == 0.0 && (x.ncols() < n_b || !(cond < SINGULAR_CONDITION)) {
        return Err(ChanEstError::Singular { condition: cond });
    }
    let reg = gram + DMatrix::identity(n_b, n_b) * Complex64::from(ridge);
    let inv = reg
        .try_inverse()
        .ok_or(ChanEstError::Singular { condition: cond })?;
    Ok(EstimatedChannel {
        h_est: y * xh * inv,
        cond_estimate: cond,
        ridge,
    })
}

/// [`ls_estimate`] with the ridge fallback: zero unless `cond(X Xᴴ)` exceeds
/// [`AUTO_RIDGE_CONDITION`], then `1e-8 · trace(X Xᴴ)/N_b`.
pub fn ls_estimate_auto(
    y: &DMatrix<Complex64>,
    x: &DMatrix<Complex64>,
) -> Result<EstimatedChannel, ChanEstError> {
    let gram = x * x.adjoint();
    let cond = gram_condition(&gram);
    let ridge = if cond > AUTO_RIDGE_CONDITION || x.ncols() < x.nrows() {
        AUTO_RIDGE_SCALE * gram.trace().re / x.nrows() as f64
    } else {
        0.0
    };
    ls_estimate(y, x, ridge)
}
