//! Dense linear-algebra helpers.
//!
//! Small systems (sparse-factor columns, per-event blocks) go through the
//! hand-rolled row-major Cholesky below; large dense work is delegated to
//! `faer`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// In-place lower Cholesky of a row-major `n×n` SPD matrix.
///
/// Only the lower triangle is read. On failure returns the pivot index at
/// which a non-positive diagonal was met.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let row_j = j * n;
        let mut d = a[row_j + j];
        for k in 0..j {
            d -= a[row_j + k] * a[row_j + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[row_j + j] = d;
        for i in (j + 1)..n {
            let row_i = i * n;
            let mut s = a[row_i + j];
            for k in 0..j {
                s -= a[row_i + k] * a[row_j + k];
            }
            a[row_i + j] = s / d;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Cholesky factor of a dense SPD matrix held by `faer`.
pub struct DenseCholesky {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl DenseCholesky {
    pub fn new(a: &Mat<f64>) -> Result<Self> {
        let n = a.nrows();
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::Numeric(format!("dense Cholesky failed ({e:?}); add diagonal jitter")))?;
        Ok(Self { llt, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> faer::MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// `L z` for a standard-normal vector `z`, i.e. a draw from `N(0, A)`.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        (0..self.n)
            .map(|i| (0..=i).map(|k| l[(i, k)] * z[k]).sum())
            .collect()
    }
}

pub fn mat_from_rows(n: usize, m: usize, data: &[f64]) -> Mat<f64> {
    Mat::from_fn(n, m, |i, j| data[i * m + j])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Mat<f64>) -> Result<f64> {
    let ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigenvalue solver failed: {e:?}")))?;
    Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cholesky_matches_hand_factor() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        cholesky_in_place(&mut a, 2).unwrap();
        assert_eq!(a, vec![2.0, 0.0, 1.0, 2f64.sqrt()]);
    }

    #[test]
    fn small_cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert_eq!(cholesky_in_place(&mut a, 2), Err(1));
    }

    #[test]
    fn dense_solve_and_logdet() {
        let a = mat_from_rows(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = DenseCholesky::new(&a).unwrap();
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-14);
        let x = c.solve_vec(&[2.0, 1.0]);
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!((min_eigenvalue(&a).unwrap() - (3.5 - 4.25f64.sqrt())).abs() < 1e-12);
    }
}
