//! Sparse inverse-Cholesky factors of kernel covariance matrices.
//!
//! Points are ordered by greedy maximin selection and factored in reverse
//! selection order. Each column of the factor is the closed-form KL-optimal
//! column over a distance-screened support and is computed independently,
//! so columns parallelize without coordination. Columns whose supports are
//! tails of another column's support reuse its dense factorization.

mod factor;
mod io;
mod lowrank;
mod ordering;
mod pattern;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::kernels::{CovarianceKernel, PredictionPoint, TrainCovariance};

pub use factor::{
    aggregate, factorize, kl_divergence, solve_posterior, solve_posterior_rows, ColumnGroup,
    PosteriorMoments, SparseFactor,
};
pub use io::{read_factor, write_factor};
pub use lowrank::{GroupTerm, LowRankCorrected};
pub use ordering::{reverse_maximin, MaximinOrdering, EXACT_LIMIT};
pub use pattern::{build_pattern, SparsityPattern};

/// Digest of everything a factor depends on.
pub fn fingerprint<P: Serialize>(points: &[PredictionPoint], params: &P, rho: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).unwrap_or_default());
    h.update(rho.to_le_bytes());
    h.update((points.len() as u64).to_le_bytes());
    for p in points {
        for v in p.site_xy.iter().chain(&p.source_xy) {
            h.update(v.to_le_bytes());
        }
        h.update((p.scenario as u64).to_le_bytes());
    }
    h.finalize().into()
}

/// Options for [`build_factor`].
#[derive(Debug, Clone, Copy)]
pub struct FactorOptions {
    pub rho: f64,
    pub aggregated: bool,
    pub exact_limit: usize,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            rho: 2.0,
            aggregated: true,
            exact_limit: EXACT_LIMIT,
        }
    }
}

/// Orders, patterns and factors the training covariance over `points`.
/// The caller is responsible for setting the fingerprint.
pub fn factor_training_covariance<K: CovarianceKernel>(
    points: &[PredictionPoint],
    kernel: &K,
    tau_dot2: f64,
    phi_dot2: f64,
    opts: FactorOptions,
) -> Result<SparseFactor> {
    let dist = |i: usize, j: usize| kernel.distance(&points[i], &points[j]);
    let ordering = reverse_maximin(points.len(), dist, opts.exact_limit)?;
    let pattern = build_pattern(&ordering, dist, opts.rho)?;
    let theta = TrainCovariance::new(points, kernel, tau_dot2, phi_dot2);
    factorize(|i, j| theta.entry(i, j), &ordering, &pattern, opts.aggregated)
}
