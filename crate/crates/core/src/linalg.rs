//! Symmetric positive-definite solves with rank and condition reporting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which learners refuse to solve.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub condition: f64,
    pub min_eigenvalue: f64,
}

/// Numerical rank from symmetric eigenvalues.
pub fn symmetric_rank(eigs: &[f64]) -> usize {
    let max = eigs.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let tol = max * eigs.len() as f64 * f64::EPSILON;
    eigs.iter().filter(|&&e| e > tol).count()
}

impl SpdFactor {
    /// Factor `mat`; rank-deficient input is always an error, and so is a
    /// condition number above `max_condition` when one is given.
    pub fn new(mat: &DMatrix<f64>, max_condition: Option<f64>) -> Result<Self> {
        let d = mat.nrows();
        let eigs = SymmetricEigen::new(mat.clone()).eigenvalues;
        let eigs: Vec<f64> = eigs.iter().copied().collect();
        let rank = symmetric_rank(&eigs);
        if rank < d {
            return Err(Error::RankDeficient { rank, dim: d });
        }
        let max = eigs.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
        let min = eigs.iter().fold(f64::INFINITY, |m, &e| m.min(e));
        let condition = max / min;
        if let Some(cap) = max_condition {
            if condition > cap {
                return Err(Error::IllConditioned(condition));
            }
        }
        let chol = Cholesky::new(mat.clone()).ok_or(Error::RankDeficient { rank: d - 1, dim: d })?;
        Ok(SpdFactor { chol, condition, min_eigenvalue: min })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// `xᵀ M⁻¹ x`
    pub fn inv_quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.solve(x))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}
