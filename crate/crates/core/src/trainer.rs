//! Mini-batched leave-one-out pseudo-likelihood tuning of the kernel
//! hyperparameters and the secondary variance components.
//!
//! For a batch covariance `A` with precision `P = A⁻¹` and `α = P y`, the
//! held-out predictive of point `i` is `N(y_i − α_i/P_ii, 1/P_ii)`. The
//! gradient of the summed log-density with respect to any covariance
//! parameter is `Σ (sym(u αᵀ) − P diag(v) P) ∘ ∂A`, with `u = P(α/P_ii)` and
//! `v_i = (1 + α_i²/P_ii) / (2 P_ii)`, so one extra `b³` product serves all
//! parameters.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::ScenarioMeanTable;
use crate::error::{Error, Result};
use crate::kernels::{PredictionPoint, TrainCovariance, JITTER_REL};
use crate::linalg::DenseCholesky;
use crate::params::HyperParams;
use crate::stats::LN_2PI;

/// Number of tuned parameters.
pub const N_PARAMS: usize = 6;

/// Names of the tuned parameters, in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "site_len", "site_var", "path_len", "path_var", "tau_dot2", "phi_dot2",
];

fn to_vec(p: &HyperParams) -> [f64; N_PARAMS] {
    let k = &p.kernel;
    let c = &p.variance_components;
    [k.site_len, k.site_var, k.path_len, k.path_var, c.tau_dot2, c.phi_dot2]
}

fn from_vec(base: &HyperParams, v: &[f64; N_PARAMS]) -> HyperParams {
    let mut p = *base;
    p.kernel.site_len = v[0];
    p.kernel.site_var = v[1];
    p.kernel.path_len = v[2];
    p.kernel.path_var = v[3];
    p.variance_components.tau_dot2 = v[4];
    p.variance_components.phi_dot2 = v[5];
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    /// Central differences in log-parameter space.
    FiniteDifference,
}

/// Natural-unit bounds per tuned parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: [f64; N_PARAMS],
    pub upper: [f64; N_PARAMS],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            lower: [0.1, 1e-5, 0.1, 1e-5, 1e-6, 1e-5],
            upper: [500.0, 5.0, 500.0, 5.0, 5.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub gradient: GradientMode,
    pub bounds: ParamBounds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            epochs: 250,
            learning_rate: 0.05,
            lr_decay: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            gradient: GradientMode::Analytic,
            bounds: ParamBounds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::arg("batch_size must be >= 2"));
        }
        if self.epochs < 1 {
            return Err(Error::arg("epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::arg("learning rate must be >= 0 and decay > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::arg("Adam moments must lie in [0, 1) and epsilon > 0"));
        }
        for i in 0..N_PARAMS {
            let (lo, hi) = (self.bounds.lower[i], self.bounds.upper[i]);
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::arg(format!("invalid bounds for {}", PARAM_NAMES[i])));
            }
        }
        Ok(())
    }
}

/// One epoch of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch objectives (mean log-density per point) averaged over the epoch.
    pub objective: f64,
    pub params: HyperParams,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Relative change of the epoch objective over the last epochs fell
    /// below `1e-4`.
    pub objective_converged: bool,
    /// Relative parameter change over the last epoch fell below `1e-3`.
    pub params_converged: bool,
    pub config: TrainConfig,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

struct PairGeometry {
    r_site: Vec<f64>,
    r_path: Vec<f64>,
}

fn geometry(points: &[PredictionPoint], p: &HyperParams) -> PairGeometry {
    let n = points.len();
    let mut r_site = vec![0.0; n * n];
    let mut r_path = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let a = points[i].site_distance(&points[j]) / p.kernel.site_len;
            let b = points[i].path_distance(&points[j]) / p.kernel.path_len;
            r_site[i * n + j] = a;
            r_site[j * n + i] = a;
            r_path[i * n + j] = b;
            r_path[j * n + i] = b;
        }
    }
    PairGeometry { r_site, r_path }
}

fn batch_covariance(points: &[PredictionPoint], p: &HyperParams) -> Result<Mat<f64>> {
    let c = &p.variance_components;
    let theta = TrainCovariance::new(points, &p.kernel, c.tau_dot2, c.phi_dot2);
    let n = points.len();
    let m = Mat::from_fn(n, n, |i, j| theta.entry(i, j));
    if m.as_ref().is_all_finite() {
        Ok(m)
    } else {
        Err(Error::Numeric("non-finite batch covariance".into()))
    }
}

fn check_batch(points: &[PredictionPoint], values: &[f64]) -> Result<()> {
    if points.len() != values.len() {
        return Err(Error::arg("points and values differ in length"));
    }
    if points.len() < 2 {
        return Err(Error::arg("leave-one-out objective needs at least 2 points"));
    }
    Ok(())
}

/// Summed LOO log predictive density of the batch, including the
/// `−½ ln 2π` constant per point.
pub fn loo_cv_objective(points: &[PredictionPoint], values: &[f64], params: &HyperParams) -> Result<f64> {
    check_batch(points, values)?;
    let a = batch_covariance(points, params)?;
    let prec = DenseCholesky::new(&a)?.inverse();
    Ok(loo_terms(&prec, values).0)
}

/// Per-point LOO means and variances, for diagnostics.
pub fn loo_predictions(
    points: &[PredictionPoint],
    values: &[f64],
    params: &HyperParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_batch(points, values)?;
    let a = batch_covariance(points, params)?;
    let prec = DenseCholesky::new(&a)?.inverse();
    let (_, alpha) = loo_terms(&prec, values);
    let n = values.len();
    Ok((
        (0..n).map(|i| values[i] - alpha[i] / prec[(i, i)]).collect(),
        (0..n).map(|i| 1.0 / prec[(i, i)]).collect(),
    ))
}

fn loo_terms(prec: &Mat<f64>, y: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len();
    let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| prec[(i, j)] * y[j]).sum()).collect();
    let obj = (0..n)
        .map(|i| {
            let p = prec[(i, i)];
            0.5 * p.ln() - alpha[i] * alpha[i] / (2.0 * p) - 0.5 * LN_2PI
        })
        .sum();
    (obj, alpha)
}

/// Objective and gradient with respect to the log parameters, both
/// divided by the batch size.
pub fn loo_cv_value_and_grad(
    points: &[PredictionPoint],
    values: &[f64],
    params: &HyperParams,
    mode: GradientMode,
) -> Result<(f64, [f64; N_PARAMS])> {
    check_batch(points, values)?;
    let n = points.len();
    let scale = 1.0 / n as f64;
    match mode {
        GradientMode::FiniteDifference => {
            let f0 = loo_cv_objective(points, values, params)? * scale;
            let base = to_vec(params);
            let h = 1e-4;
            let mut g = [0.0; N_PARAMS];
            for (k, gk) in g.iter_mut().enumerate() {
                let mut up = base;
                let mut dn = base;
                up[k] = (base[k].ln() + h).exp();
                dn[k] = (base[k].ln() - h).exp();
                let fu = loo_cv_objective(points, values, &from_vec(params, &up))?;
                let fd = loo_cv_objective(points, values, &from_vec(params, &dn))?;
                *gk = (fu - fd) / (2.0 * h) * scale;
            }
            Ok((f0, g))
        }
        GradientMode::Analytic => {
            let a = batch_covariance(points, params)?;
            let prec = DenseCholesky::new(&a)?.inverse();
            let (obj, alpha) = loo_terms(&prec, values);
            let pd: Vec<f64> = (0..n).map(|i| prec[(i, i)]).collect();
            let w_vec: Vec<f64> = (0..n).map(|i| alpha[i] / pd[i]).collect();
            let u: Vec<f64> = (0..n).map(|i| (0..n).map(|j| prec[(i, j)] * w_vec[j]).sum()).collect();
            let v: Vec<f64> = (0..n).map(|i| 0.5 * (1.0 + alpha[i] * alpha[i] / pd[i]) / pd[i]).collect();
            let pv = Mat::from_fn(n, n, |i, j| prec[(i, j)] * v[j]);
            let m = &pv * &prec;

            let geo = geometry(points, params);
            let k = &params.kernel;
            let c = &params.variance_components;
            let nu = k.nu;
            let mut g = [0.0; N_PARAMS];
            for i in 0..n {
                for j in 0..n {
                    let w = 0.5 * (u[i] * alpha[j] + u[j] * alpha[i]) - m[(i, j)];
                    let rs = geo.r_site[i * n + j];
                    let rp = geo.r_path[i * n + j];
                    g[0] += w * k.site_var * nu.log_length_derivative(rs);
                    g[1] += w * k.site_var * nu.correlation(rs);
                    g[2] += w * k.path_var * nu.log_length_derivative(rp);
                    g[3] += w * k.path_var * nu.correlation(rp);
                    if points[i].scenario == points[j].scenario {
                        g[4] += w * c.tau_dot2;
                    }
                    if i == j {
                        g[5] += w * c.phi_dot2;
                        // Jitter scales with the kernel variances.
                        g[1] += w * JITTER_REL * k.site_var;
                        g[3] += w * JITTER_REL * k.path_var;
                    }
                }
            }
            for gk in &mut g {
                *gk *= scale;
            }
            Ok((obj * scale, g))
        }
    }
}

/// Exact marginal log-likelihood `ln N(y; 0, A)` over a small point set;
/// a reference objective for cross-checks.
pub fn marginal_loglik(points: &[PredictionPoint], values: &[f64], params: &HyperParams) -> Result<f64> {
    if points.len() != values.len() || points.is_empty() {
        return Err(Error::arg("points and values must be non-empty and aligned"));
    }
    let a = batch_covariance(points, params)?;
    let ch = DenseCholesky::new(&a)?;
    let x = ch.solve_vec(values);
    let quad: f64 = x.iter().zip(values).map(|(a, b)| a * b).sum();
    Ok(-0.5 * (quad + ch.log_det() + values.len() as f64 * LN_2PI))
}

/// Stochastic ascent of the LOO objective over epoch-shuffled contiguous
/// batches, with Adam steps in log-parameter space.
pub fn fit(
    table: &ScenarioMeanTable,
    config: &TrainConfig,
    init: &HyperParams,
) -> Result<(HyperParams, TrainTrace)> {
    fit_points(&table.points(), &table.values(), config, init)
}

/// [`fit`] on raw points and values.
pub fn fit_points(
    points: &[PredictionPoint],
    values: &[f64],
    config: &TrainConfig,
    init: &HyperParams,
) -> Result<(HyperParams, TrainTrace)> {
    config.validate()?;
    init.validate()?;
    if points.len() != values.len() {
        return Err(Error::arg("points and values differ in length"));
    }
    if points.len() < 2 {
        return Err(Error::arg("training needs at least 2 points"));
    }
    let b = &config.bounds;
    let mut nat = to_vec(init);
    for i in 0..N_PARAMS {
        if !(nat[i] >= b.lower[i] && nat[i] <= b.upper[i]) {
            return Err(Error::arg(format!(
                "initial {} = {} lies outside [{}, {}]",
                PARAM_NAMES[i], nat[i], b.lower[i], b.upper[i]
            )));
        }
    }
    let mut logp: [f64; N_PARAMS] = nat.map(f64::ln);
    let lo = b.lower.map(f64::ln);
    let hi = b.upper.map(f64::ln);
    let mut m1 = [0.0; N_PARAMS];
    let mut m2 = [0.0; N_PARAMS];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut lr = config.learning_rate;
    let mut last_valid = from_vec(init, &nat);

    let mut bp: Vec<PredictionPoint> = Vec::with_capacity(config.batch_size);
    let mut by: Vec<f64> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        idx.shuffle(&mut rng);
        let mut obj_sum = 0.0;
        let mut n_batches = 0usize;
        let mut g_last = 0.0;
        for (batch, chunk) in idx.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            bp.clear();
            by.clear();
            bp.extend(chunk.iter().map(|&i| points[i]));
            by.extend(chunk.iter().map(|&i| values[i]));
            let params = from_vec(init, &nat);
            let result = loo_cv_value_and_grad(&bp, &by, &params, config.gradient);
            let (obj, g) = match result {
                Ok((o, g)) if o.is_finite() && g.iter().all(|x| x.is_finite()) => (o, g),
                Ok(_) | Err(Error::Numeric(_)) => {
                    return Err(Error::NonFinite {
                        epoch,
                        batch,
                        last_valid: Box::new(last_valid),
                    })
                }
                Err(e) => return Err(e),
            };
            last_valid = params;
            obj_sum += obj;
            n_batches += 1;
            g_last = g.iter().map(|x| x * x).sum::<f64>().sqrt();

            step += 1;
            let bc1 = 1.0 - config.beta1.powi(step);
            let bc2 = 1.0 - config.beta2.powi(step);
            for k in 0..N_PARAMS {
                m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * g[k];
                m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * g[k] * g[k];
                let delta = lr * (m1[k] / bc1) / ((m2[k] / bc2).sqrt() + config.epsilon);
                if delta != 0.0 {
                    logp[k] = (logp[k] + delta).clamp(lo[k], hi[k]);
                    nat[k] = logp[k].exp();
                }
            }
        }
        lr *= config.lr_decay;
        let params = from_vec(init, &nat);
        records.push(EpochRecord {
            epoch,
            objective: obj_sum / n_batches.max(1) as f64,
            params,
            grad_norm: g_last,
        });
    }

    let (objective_converged, params_converged) = convergence(&records);
    let final_params = from_vec(init, &nat);
    Ok((
        final_params,
        TrainTrace {
            records,
            objective_converged,
            params_converged,
            config: *config,
        },
    ))
}

fn convergence(records: &[EpochRecord]) -> (bool, bool) {
    let k = records.len();
    if k < 6 {
        return (false, false);
    }
    let window = &records[k - 5..];
    let mean = window.iter().map(|r| r.objective).sum::<f64>() / 5.0;
    let spread = window.iter().map(|r| (r.objective - mean).abs()).fold(0.0, f64::max);
    let obj = spread <= 1e-4 * mean.abs().max(1e-3);
    let a = to_vec(&records[k - 2].params);
    let b = to_vec(&records[k - 1].params);
    let par = a.iter().zip(&b).all(|(x, y)| ((x - y) / x).abs() < 1e-3);
    (obj, par)
}

/// CSV rendering of a trace: one row per epoch with the objective and every
/// tuned parameter. The header comment records the optimizer settings.
pub fn trace_csv(trace: &TrainTrace) -> String {
    let c = &trace.config;
    let mut s = format!(
        "# units: objective in nats per point; lengths in km; variances in ln-units^2\n\
         # optimizer: adam lr={} decay={} beta1={} beta2={} eps={} batch_size={} epochs={} seed={} gradient={:?}\n\
         epoch,objective,grad_norm,{}\n",
        c.learning_rate,
        c.lr_decay,
        c.beta1,
        c.beta2,
        c.epsilon,
        c.batch_size,
        c.epochs,
        c.seed,
        c.gradient,
        PARAM_NAMES.join(",")
    );
    for r in &trace.records {
        let v = to_vec(&r.params);
        s.push_str(&format!("{},{},{}", r.epoch, r.objective, r.grad_norm));
        for x in v {
            s.push_str(&format!(",{x}"));
        }
        s.push('\n');
    }
    s
}
