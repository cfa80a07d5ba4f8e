//! Small dense linear-algebra helpers shared by the M-steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solve the symmetric positive semi-definite system `gram * x = rhs`.
///
/// Tries a Cholesky factorization first; on failure (rank-deficient Gram
/// matrix) adds `ridge_factor * trace(gram) / p` to the diagonal and falls
/// back to LU.
pub fn solve_spd<F: Scalar>(
    gram: &DMatrix<F>,
    rhs: &DVector<F>,
    ridge_factor: F,
) -> Result<DVector<F>> {
    debug_assert_eq!(gram.nrows(), gram.ncols());
    debug_assert_eq!(gram.nrows(), rhs.len());
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let p = gram.nrows();
    let mut trace = F::zero();
    for i in 0..p {
        trace += gram[(i, i)];
    }
    let mut ridge = ridge_factor * trace / F::fl(p as f64);
    if ridge <= F::zero() {
        ridge = F::fl(1e-12);
    }
    let mut regularized = gram.clone();
    for _ in 0..40 {
        for i in 0..p {
            regularized[(i, i)] += ridge;
        }
        if let Some(chol) = regularized.clone().cholesky() {
            return Ok(chol.solve(rhs));
        }
        ridge *= F::fl(10.0);
    }
    Err(Error::Degenerate(
        "normal equations unsolvable even after ridge regularization".into(),
    ))
}

/// Ordinary least squares `argmin ||y - X b||^2` via the normal equations.
pub fn least_squares<F: Scalar>(
    design: &DMatrix<F>,
    ys: &DVector<F>,
    ridge_factor: F,
) -> Result<DVector<F>> {
    if design.nrows() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            ys.len()
        )));
    }
    let gram = design.transpose() * design;
    let rhs = design.transpose() * ys;
    solve_spd(&gram, &rhs, ridge_factor)
}
