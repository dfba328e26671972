//! Factorizations for the regularized Gram systems.

use nalgebra::{Cholesky, DMatrix, Dyn, LU};

use crate::error::{Error, Result};

/// A factorization of a square system matrix, computed once and reused for many right-hand sides.
///
/// Symmetric positive-definite systems use Cholesky. Everything else (including the regularized
/// composite-product Gram matrix, which is indefinite) falls back to LU with partial pivoting.
pub enum Factorization {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl Factorization {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::argument("system matrix must be square"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("system matrix has non-finite entries", None));
        }
        if a == a.transpose() {
            if let Some(chol) = Cholesky::new(a.clone()) {
                let diag = chol.l_dirty().diagonal();
                if diag.iter().all(|d| *d > 0.0 && d.is_finite()) {
                    return Ok(Factorization::Cholesky(chol));
                }
            }
        }
        let lu = LU::new(a);
        let u_diag = lu.u().diagonal();
        let max = u_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = u_diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(min > max * f64::EPSILON) {
            let condition = if min > 0.0 { max / min } else { f64::INFINITY };
            return Err(Error::numerical(
                "regularized system is numerically singular",
                Some(condition),
            ));
        }
        Ok(Factorization::Lu(lu))
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self, Factorization::Cholesky(_))
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = match self {
            Factorization::Cholesky(c) => c.solve(b),
            Factorization::Lu(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::numerical("LU solve failed", None))?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("solve produced non-finite values", None));
        }
        Ok(x)
    }
}

/// `A + shift·I`.
pub fn add_diagonal(mut a: DMatrix<f64>, shift: f64) -> DMatrix<f64> {
    for i in 0..a.nrows().min(a.ncols()) {
        a[(i, i)] += shift;
    }
    a
}
