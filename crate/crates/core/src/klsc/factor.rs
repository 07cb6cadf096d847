use faer::Mat;
use rayon::prelude::*;

use super::{MaximinOrdering, SparsityPattern};
use crate::error::{Error, Result};
use crate::linalg::{self, DenseCholesky};

/// Sparse lower-triangular factor `L` with `Θ⁻¹ ≈ L Lᵀ` in factor order.
///
/// Column `i` is supported on `pattern.column(i)`; values are stored in the
/// same layout as the pattern rows.
#[derive(Debug, Clone)]
pub struct SparseFactor {
    pub(crate) ordering: MaximinOrdering,
    pub(crate) pattern: SparsityPattern,
    pub(crate) values: Vec<f64>,
    /// Leading column of the group that produced each column.
    pub(crate) groups: Vec<usize>,
    pub(crate) fingerprint: [u8; 32],
}

/// One shared dense factorization serving several columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnGroup {
    pub leader: usize,
    /// `(column, offset into the leader's support)`.
    pub members: Vec<(usize, usize)>,
}

/// Groups columns whose supports are exact tails of a leader's support, so
/// the leading block of one reversed factorization serves every member.
pub fn aggregate(pattern: &SparsityPattern) -> Vec<ColumnGroup> {
    let n = pattern.len();
    let mut assigned = vec![false; n];
    let mut groups = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let s = pattern.column(i);
        let mut members = vec![(i, 0)];
        for (t, &j) in s.iter().enumerate().skip(1) {
            if !assigned[j] && pattern.column(j) == &s[t..] {
                assigned[j] = true;
                members.push((j, t));
            }
        }
        groups.push(ColumnGroup { leader: i, members });
    }
    groups
}

fn singleton_groups(n: usize) -> Vec<ColumnGroup> {
    (0..n)
        .map(|i| ColumnGroup {
            leader: i,
            members: vec![(i, 0)],
        })
        .collect()
}

/// Values of every member column of `group`.
fn solve_group(
    theta: &(impl Fn(usize, usize) -> f64 + Sync),
    ordering: &MaximinOrdering,
    pattern: &SparsityPattern,
    group: &ColumnGroup,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let s = pattern.column(group.leader);
    let m = s.len();
    // Reversed support: the column's own point sits last.
    let pts: Vec<usize> = s.iter().rev().map(|&p| ordering.point_at(p)).collect();
    let mut a = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..=r {
            a[r * m + c] = theta(pts[r], pts[c]);
        }
    }
    linalg::cholesky_in_place(&mut a, m).map_err(|pivot| {
        Error::Numeric(format!(
            "covariance submatrix for factor column {} (point {}) is not positive definite at pivot {pivot}; increase diagonal jitter or noise variance",
            group.leader,
            ordering.point_at(group.leader)
        ))
    })?;
    let mut out = Vec::with_capacity(group.members.len());
    let mut v = vec![0.0; m];
    for &(col, t) in &group.members {
        let q = m - t;
        v[q - 1] = 1.0 / a[(q - 1) * m + q - 1];
        for r in (0..q - 1).rev() {
            let mut acc = 0.0;
            for b in r + 1..q {
                acc += a[b * m + r] * v[b];
            }
            v[r] = -acc / a[r * m + r];
        }
        out.push((col, (0..q).map(|k| v[q - 1 - k]).collect()));
    }
    Ok(out)
}

/// Computes every column of the factor. `theta` evaluates the training
/// covariance on original point indices. Output does not depend on the
/// number of rayon workers.
pub fn factorize(
    theta: impl Fn(usize, usize) -> f64 + Sync,
    ordering: &MaximinOrdering,
    pattern: &SparsityPattern,
    aggregated: bool,
) -> Result<SparseFactor> {
    let n = ordering.len();
    if pattern.len() != n {
        return Err(Error::arg("pattern and ordering sizes differ"));
    }
    let groups = if aggregated {
        aggregate(pattern)
    } else {
        singleton_groups(n)
    };
    let solved: Vec<Vec<(usize, Vec<f64>)>> = groups
        .par_iter()
        .map(|g| solve_group(&theta, ordering, pattern, g))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; pattern.nnz()];
    let mut leaders = vec![0; n];
    for (g, cols) in groups.iter().zip(solved) {
        for (col, vals) in cols {
            let start = pattern.offsets()[col];
            values[start..start + vals.len()].copy_from_slice(&vals);
            leaders[col] = g.leader;
        }
    }
    Ok(SparseFactor {
        ordering: ordering.clone(),
        pattern: pattern.clone(),
        values,
        groups: leaders,
        fingerprint: [0; 32],
    })
}

impl SparseFactor {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn ordering(&self) -> &MaximinOrdering {
        &self.ordering
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn rho(&self) -> f64 {
        self.pattern.rho()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_values(&self, i: usize) -> &[f64] {
        let o = self.pattern.offsets();
        &self.values[o[i]..o[i + 1]]
    }

    /// Leading column of the aggregation group of each column.
    pub fn group_leaders(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.iter().enumerate().filter(|(i, &g)| *i == g).count()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn set_fingerprint(&mut self, fp: [u8; 32]) {
        self.fingerprint = fp;
    }

    /// Fails with a staleness error unless the stored fingerprint equals
    /// `expected`.
    pub fn check_fingerprint(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(Error::Staleness(
                "factor was built for different observations, hyperparameters or rho; rebuild it".into(),
            ));
        }
        Ok(())
    }

    fn to_factor_order(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|p| x[self.ordering.point_at(p)]).collect()
    }

    /// `Lᵀ x` for `x` in factor order.
    fn lt_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|c| {
                self.pattern
                    .column(c)
                    .iter()
                    .zip(self.column_values(c))
                    .map(|(&r, &v)| v * x[r])
                    .sum()
            })
            .collect()
    }

    /// `(L Lᵀ) y` with `y` and the result in original point order.
    pub fn precision_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.len() {
            return Err(Error::arg(format!(
                "vector has {} entries, factor has {}",
                y.len(),
                self.len()
            )));
        }
        let w = self.lt_mul(&self.to_factor_order(y));
        let mut z = vec![0.0; self.len()];
        for c in 0..self.len() {
            for (&r, &v) in self.pattern.column(c).iter().zip(self.column_values(c)) {
                z[r] += v * w[c];
            }
        }
        let mut out = vec![0.0; self.len()];
        for (p, zp) in z.into_iter().enumerate() {
            out[self.ordering.point_at(p)] = zp;
        }
        Ok(out)
    }

    /// `‖Lᵀ k‖² = kᵀ (L Lᵀ) k` for `k` in original point order.
    pub fn quad_form(&self, k: &[f64]) -> f64 {
        self.lt_mul(&self.to_factor_order(k)).iter().map(|v| v * v).sum()
    }

    /// Dense `L` in factor order.
    pub fn dense_lower(&self) -> Mat<f64> {
        let n = self.len();
        let mut l = Mat::zeros(n, n);
        for c in 0..n {
            for (&r, &v) in self.pattern.column(c).iter().zip(self.column_values(c)) {
                l[(r, c)] = v;
            }
        }
        l
    }

    /// Dense `L Lᵀ` in original point order.
    pub fn dense_precision(&self) -> Mat<f64> {
        let l = self.dense_lower();
        let p = &l * l.transpose();
        let n = self.len();
        let mut pos = vec![0; n];
        for q in 0..n {
            pos[self.ordering.point_at(q)] = q;
        }
        Mat::from_fn(n, n, |i, j| p[(pos[i], pos[j])])
    }
}

/// `KL(N(0, Θ) ‖ N(0, (L Lᵀ)⁻¹))` for a dense `Θ` in original order.
pub fn kl_divergence(factor: &SparseFactor, theta: &Mat<f64>) -> Result<f64> {
    let n = factor.len();
    let order = factor.ordering.factor_order();
    let tp = Mat::from_fn(n, n, |i, j| theta[(order[i], order[j])]);
    let l = factor.dense_lower();
    let m = l.transpose() * &tp * &l;
    let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
    let log_det_theta = DenseCholesky::new(&tp)?.log_det();
    let log_diag: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    Ok(0.5 * (trace - n as f64 - log_det_theta - 2.0 * log_diag))
}

/// Posterior moments from a factor built on the observation points.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub mean: Vec<f64>,
    /// Kernel posterior variance, clipped at zero.
    pub epistemic: Vec<f64>,
    /// `epistemic + noise`.
    pub variance: Vec<f64>,
    /// Number of points whose kernel variance was clipped.
    pub clipped: usize,
}

/// Kriging with the sparse precision: `mean = k·(L Lᵀ)y`,
/// `variance = max(prior − kᵀ(L Lᵀ)k, 0) + noise`. `cross` is
/// prediction × observation.
pub fn solve_posterior(
    factor: &SparseFactor,
    obs_values: &[f64],
    cross: &crate::kernels::CovarianceBlock,
    prior_var: &[f64],
    noise: f64,
) -> Result<PosteriorMoments> {
    if cross.ncols() != factor.len() || prior_var.len() != cross.nrows() {
        return Err(Error::arg(format!(
            "dimension mismatch: cross {}x{}, factor {}, prior {}",
            cross.nrows(),
            cross.ncols(),
            factor.len(),
            prior_var.len()
        )));
    }
    solve_posterior_rows(factor, obs_values, cross.nrows(), |i| (cross.row(i), prior_var[i], noise))
}

/// Row-streaming form of [`solve_posterior`]: `row(i)` returns the
/// cross-covariance row, prior kernel variance and noise of prediction `i`.
pub fn solve_posterior_rows(
    factor: &SparseFactor,
    obs_values: &[f64],
    n_pred: usize,
    row: impl Fn(usize) -> (Vec<f64>, f64, f64) + Sync,
) -> Result<PosteriorMoments> {
    let z = factor.precision_apply(obs_values)?;
    let per: Vec<(f64, f64, f64, bool)> = (0..n_pred)
        .into_par_iter()
        .map(|i| {
            let (k, prior, noise) = row(i);
            let mean = k.iter().zip(&z).map(|(a, b)| a * b).sum();
            let raw = prior - factor.quad_form(&k);
            let epi = raw.max(0.0);
            (mean, epi, epi + noise, raw < 0.0)
        })
        .collect();
    Ok(PosteriorMoments {
        mean: per.iter().map(|p| p.0).collect(),
        epistemic: per.iter().map(|p| p.1).collect(),
        variance: per.iter().map(|p| p.2).collect(),
        clipped: per.iter().filter(|p| p.3).count(),
    })
}
