//! Non-ergodic covariance function: an additive site Matérn term over site
//! coordinates and a path Matérn term over concatenated site/source
//! coordinates, plus the noise and between-event augmentation of the
//! training covariance.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative diagonal jitter applied to every training covariance.
pub const JITTER_REL: f64 = 1e-9;

/// Largest training block for which assembly runs the eigenvalue check.
pub const PSD_CHECK_LIMIT: usize = 512;

/// Matérn smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl TryFrom<f64> for MaternNu {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        match v {
            v if v == 0.5 => Ok(MaternNu::Half),
            v if v == 1.5 => Ok(MaternNu::ThreeHalves),
            v if v == 2.5 => Ok(MaternNu::FiveHalves),
            _ => Err(format!("unsupported Matérn nu {v}; expected 0.5, 1.5 or 2.5")),
        }
    }
}

impl From<MaternNu> for f64 {
    fn from(nu: MaternNu) -> f64 {
        match nu {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

impl MaternNu {
    /// Unit-variance correlation at scaled distance `r = d / ℓ`.
    #[inline]
    pub fn correlation(self, r: f64) -> f64 {
        match self {
            MaternNu::Half => (-r).exp(),
            MaternNu::ThreeHalves => {
                let a = 3f64.sqrt() * r;
                (1.0 + a) * (-a).exp()
            }
            MaternNu::FiveHalves => {
                let a = 5f64.sqrt() * r;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    /// `ℓ ∂M(d/ℓ)/∂ℓ = -r M'(r)`, the log-length-scale derivative.
    #[inline]
    pub fn log_length_derivative(self, r: f64) -> f64 {
        match self {
            MaternNu::Half => r * (-r).exp(),
            MaternNu::ThreeHalves => {
                let a = 3f64.sqrt() * r;
                a * a * (-a).exp()
            }
            MaternNu::FiveHalves => {
                let a = 5f64.sqrt() * r;
                a * a * (1.0 + a) / 3.0 * (-a).exp()
            }
        }
    }
}

/// Kernel hyperparameters. Variances in ln-units², lengths in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub site_var: f64,
    pub site_len: f64,
    pub path_var: f64,
    pub path_len: f64,
    pub nu: MaternNu,
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.site_var) && ok(self.site_len) && ok(self.path_var) && ok(self.path_len)) {
            return Err(Error::arg(format!(
                "kernel variances and length scales must be finite and positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Kernel input: a (scenario, site) pair with its planar coordinates.
///
/// `scenario` and `site` are opaque keys; points with equal `scenario` share
/// the between-event term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub site_xy: [f64; 2],
    pub source_xy: [f64; 2],
    pub scenario: usize,
    pub site: usize,
}

impl PredictionPoint {
    pub fn site_distance(&self, other: &Self) -> f64 {
        let dx = self.site_xy[0] - other.site_xy[0];
        let dy = self.site_xy[1] - other.site_xy[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Euclidean distance between the 4-vectors (site_x, site_y, src_x, src_y).
    pub fn path_distance(&self, other: &Self) -> f64 {
        let a = self.site_xy[0] - other.site_xy[0];
        let b = self.site_xy[1] - other.site_xy[1];
        let c = self.source_xy[0] - other.source_xy[0];
        let d = self.source_xy[1] - other.source_xy[1];
        (a * a + b * b + c * c + d * d).sqrt()
    }
}

/// Evaluation interface for the latent covariance. Alternative path kernels
/// plug in here.
pub trait CovarianceKernel: Send + Sync {
    fn covariance(&self, p: &PredictionPoint, q: &PredictionPoint) -> f64;

    /// `k(p, p)`.
    fn variance(&self) -> f64;

    /// Distance used for screening-based orderings.
    fn distance(&self, p: &PredictionPoint, q: &PredictionPoint) -> f64;
}

impl CovarianceKernel for KernelHyper {
    #[inline]
    fn covariance(&self, p: &PredictionPoint, q: &PredictionPoint) -> f64 {
        kernel_value(p, q, self)
    }

    fn variance(&self) -> f64 {
        self.site_var + self.path_var
    }

    fn distance(&self, p: &PredictionPoint, q: &PredictionPoint) -> f64 {
        p.path_distance(q)
    }
}

#[inline]
pub fn kernel_value(p: &PredictionPoint, q: &PredictionPoint, h: &KernelHyper) -> f64 {
    h.site_var * h.nu.correlation(p.site_distance(q) / h.site_len)
        + h.path_var * h.nu.correlation(p.path_distance(q) / h.path_len)
}

/// Entry oracle for the training covariance `K + φ̇²I + τ̇²1 + jitter·I`.
#[derive(Clone, Copy)]
pub struct TrainCovariance<'a, K: CovarianceKernel> {
    pub points: &'a [PredictionPoint],
    pub kernel: &'a K,
    pub tau_dot2: f64,
    pub phi_dot2: f64,
    pub jitter: f64,
}

impl<'a, K: CovarianceKernel> TrainCovariance<'a, K> {
    pub fn new(points: &'a [PredictionPoint], kernel: &'a K, tau_dot2: f64, phi_dot2: f64) -> Self {
        Self {
            points,
            kernel,
            tau_dot2,
            phi_dot2,
            jitter: JITTER_REL * kernel.variance(),
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let p = &self.points[i];
        let q = &self.points[j];
        let mut v = self.kernel.covariance(p, q);
        if p.scenario == q.scenario {
            v += self.tau_dot2;
        }
        if i == j {
            v += self.phi_dot2 + self.jitter;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Dense (possibly rectangular) block of covariance values.
#[derive(Debug, Clone)]
pub struct CovarianceBlock {
    matrix: Mat<f64>,
}

impl CovarianceBlock {
    pub fn from_mat(matrix: Mat<f64>) -> Self {
        Self { matrix }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols()).map(|j| self.matrix[(i, j)]).collect()
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.matrix
    }
}

fn build_rows(nrows: usize, ncols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Mat<f64> {
    let rows: Vec<Vec<f64>> = (0..nrows)
        .into_par_iter()
        .map(|i| (0..ncols).map(|j| f(i, j)).collect())
        .collect();
    Mat::from_fn(nrows, ncols, |i, j| rows[i][j])
}

/// Training covariance `K_f + φ̇²I + τ̇²1` (plus jitter) over `points`.
pub fn assemble_train_cov<K: CovarianceKernel>(
    points: &[PredictionPoint],
    kernel: &K,
    tau_dot2: f64,
    phi_dot2: f64,
) -> Result<CovarianceBlock> {
    if points.is_empty() {
        return Err(Error::arg("training covariance needs at least one point"));
    }
    if !(tau_dot2 >= 0.0 && phi_dot2 >= 0.0) {
        return Err(Error::arg("variance components must be non-negative"));
    }
    let theta = TrainCovariance::new(points, kernel, tau_dot2, phi_dot2);
    let n = points.len();
    let m = build_rows(n, n, |i, j| theta.entry(i, j));
    if n <= PSD_CHECK_LIMIT {
        let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
        let min_ev = linalg::min_eigenvalue(&m)?;
        if min_ev < -1e-8 * trace {
            return Err(Error::Numeric(format!(
                "training covariance is not PSD (min eigenvalue {min_ev:e}); increase jitter or noise variance"
            )));
        }
    }
    Ok(CovarianceBlock::from_mat(m))
}

/// Rectangular kernel block `k(pred_i, obs_j)`; no noise augmentation.
pub fn assemble_cross_cov<K: CovarianceKernel>(
    pred: &[PredictionPoint],
    obs: &[PredictionPoint],
    kernel: &K,
) -> CovarianceBlock {
    CovarianceBlock::from_mat(build_rows(pred.len(), obs.len(), |i, j| {
        kernel.covariance(&pred[i], &obs[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::HyperParams;

    fn pt(sx: f64, sy: f64, ex: f64, ey: f64, scen: usize) -> PredictionPoint {
        PredictionPoint {
            site_xy: [sx, sy],
            source_xy: [ex, ey],
            scenario: scen,
            site: 0,
        }
    }

    fn ngmm1() -> KernelHyper {
        HyperParams::preset("ngmm1").unwrap().kernel
    }

    #[test]
    fn coincident_points_give_total_kernel_variance() {
        let h = ngmm1();
        let p = pt(1.0, 2.0, 30.0, -4.0, 0);
        assert!((kernel_value(&p, &p, &h) - 0.171).abs() < 1e-15);
    }

    #[test]
    fn far_points_decorrelate() {
        let h = ngmm1();
        let p = pt(0.0, 0.0, 0.0, 0.0, 0);
        let q = pt(1e4, 0.0, 1e4, 0.0, 1);
        assert!(kernel_value(&p, &q, &h) < 1e-100);
    }

    #[test]
    fn exponential_kernel_at_one_length_scale() {
        let h = KernelHyper {
            site_var: 0.3,
            site_len: 5.0,
            path_var: 0.2,
            path_len: 7.0,
            nu: MaternNu::Half,
        };
        // Same source, sites 5 km apart: site term at r=1, path term at d=5.
        let p = pt(0.0, 0.0, 10.0, 10.0, 0);
        let q = pt(3.0, 4.0, 10.0, 10.0, 0);
        let expected = 0.3 * (-1.0f64).exp() + 0.2 * (-5.0f64 / 7.0).exp();
        assert!((kernel_value(&p, &q, &h) - expected).abs() < 1e-15);
        // Same site and source: the path term is at full variance.
        let q = pt(0.0, 0.0, 10.0, 10.0, 0);
        assert!((kernel_value(&p, &q, &h) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn length_derivative_matches_finite_difference() {
        for nu in [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves] {
            let d = 3.7;
            let l: f64 = 4.2;
            let h = 1e-6;
            let f = |ln_l: f64| nu.correlation(d / ln_l.exp());
            let fd = (f(l.ln() + h) - f(l.ln() - h)) / (2.0 * h);
            assert!((fd - nu.log_length_derivative(d / l)).abs() < 1e-8, "{nu:?}");
        }
    }

    #[test]
    fn independent_limit_and_between_event_block() {
        let h = ngmm1();
        let (tau, phi) = (0.036, 0.0545);
        let far = [pt(0.0, 0.0, 0.0, 0.0, 0), pt(1e4, 1e4, 1e4, 1e4, 1)];
        let c = assemble_train_cov(&far, &h, tau, phi).unwrap();
        let diag = 0.171 + tau + phi;
        assert!((c.get(0, 0) - diag).abs() < 1e-9);
        assert!(c.get(0, 1).abs() < 1e-12);

        let same = [pt(0.0, 0.0, 0.0, 0.0, 7), pt(1e4, 1e4, 0.0, 0.0, 7)];
        let c = assemble_train_cov(&same, &h, tau, phi).unwrap();
        assert!((c.get(0, 1) - tau).abs() < 1e-12);
    }

    #[test]
    fn cross_cov_shapes() {
        let h = ngmm1();
        let obs = [pt(0.0, 0.0, 5.0, 5.0, 0), pt(2.0, 0.0, 5.0, 5.0, 0)];
        let c = assemble_cross_cov(&[], &obs, &h);
        assert_eq!((c.nrows(), c.ncols()), (0, 2));
        let c = assemble_cross_cov(&obs[..1], &obs, &h);
        assert!((c.get(0, 0) - 0.171).abs() < 1e-15);
    }

    #[test]
    fn nu_serde_round_trip() {
        let h = ngmm1();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"nu\":1.5"));
        let back: KernelHyper = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<MaternNu>("1.0").is_err());
    }
}
