//! Dense Cholesky solve of the symmetric positive definite Galerkin system.

use crate::assembly::GalerkinSystem;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("empty system")]
    Empty,
    #[error("matrix is {rows}x{cols} but the right-hand side has length {rhs}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        rhs: usize,
    },
    #[error("matrix is not positive definite: pivot {pivot} is {value}")]
    NotSpd { pivot: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub coeffs: DVector<f64>,
    /// `||A c - b||_2`.
    pub residual_norm: f64,
    /// `c^T A c`.
    pub energy: f64,
}

/// Lower-triangular factor `L` with `A = L L^T`. Only the lower triangle of `a` is read.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, SolveError> {
        let n = a.nrows();
        if n == 0 {
            return Err(SolveError::Empty);
        }
        if a.ncols() != n {
            return Err(SolveError::DimensionMismatch {
                rows: n,
                cols: a.ncols(),
                rhs: n,
            });
        }
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d.is_nan() || d <= 0.0 {
                return Err(SolveError::NotSpd { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `L y = b` then `L^T x = y`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.l;
        let mut y = b.clone();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= l[(i, k)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in i + 1..n {
                v -= l[(k, i)] * y[k];
            }
            y[i] = v / l[(i, i)];
        }
        y
    }

    /// Hager's estimate of `||A^-1||_1`; a lower bound that is usually sharp.
    pub fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.dim();
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.lp_norm(1);
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            // A is symmetric, so A^-T = A^-1
            let z = self.solve(&xi);
            let (j, zmax) = z
                .iter()
                .map(|v| v.abs())
                .enumerate()
                .fold((0, 0.0), |m, (i, v)| if v > m.1 { (i, v) } else { m });
            if zmax <= z.dot(&x) {
                break;
            }
            x = DVector::zeros(n);
            x[j] = 1.0;
        }
        est
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max)
}

/// Estimated 1-norm condition number of an SPD matrix.
pub fn condition_estimate(a: &DMatrix<f64>) -> Result<f64, SolveError> {
    let chol = Cholesky::new(a)?;
    Ok(norm1(a) * chol.inverse_norm1_estimate())
}

/// Solves `A c = b` for a dense SPD matrix.
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Solution, SolveError> {
    if a.nrows() != b.len() || a.ncols() != b.len() {
        return Err(SolveError::DimensionMismatch {
            rows: a.nrows(),
            cols: a.ncols(),
            rhs: b.len(),
        });
    }
    let chol = Cholesky::new(a)?;
    if log::log_enabled!(log::Level::Debug) {
        log::debug!(
            "n = {}, estimated cond_1 = {:.3e}",
            b.len(),
            norm1(a) * chol.inverse_norm1_estimate()
        );
    }
    let coeffs = chol.solve(b);
    let residual_norm = (a * &coeffs - b).norm();
    let energy = coeffs.dot(&(a * &coeffs));
    Ok(Solution {
        coeffs,
        residual_norm,
        energy,
    })
}

pub fn cholesky_solve(system: &GalerkinSystem) -> Result<Solution, SolveError> {
    solve_dense(&system.stiffness, &system.load)
}
