//! Posterior ground-motion adjustments in prediction and interpolation mode,
//! plus per-group error metrics.
//!
//! The observation covariance is `Θ = K_S + K_P + τ̇²·[same scenario] + φ̇²I`.
//! By default the path kernel and noise go through the sparse factor while
//! the site kernel (over unique site coordinates) and the scenario block are
//! applied exactly as grouped low-rank terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    collapse_to_means, Group, ResidualCatalog, RuptureScenario, RuptureVariation, ScenarioMeanTable, Site,
    SplitAssignment,
};
use crate::error::{Error, Result};
use crate::kernels::{kernel_value, KernelHyper, PredictionPoint, JITTER_REL};
use crate::klsc::{self, build_pattern, factorize, reverse_maximin, GroupTerm, LowRankCorrected, EXACT_LIMIT};
use crate::linalg::DenseCholesky;
use crate::lmm::{catalog_deviations, condition_random_effects};
use crate::params::HyperParams;

/// Largest prediction set for which a dense posterior covariance is formed.
pub const DENSE_COVARIANCE_LIMIT: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSplit {
    /// Sparse factor on path kernel + noise; site and scenario terms exact.
    #[default]
    LowRank,
    /// Sparse factor on the whole covariance.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    pub rho: f64,
    pub aggregated: bool,
    pub split: CovarianceSplit,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            rho: 3.0,
            aggregated: true,
            split: CovarianceSplit::LowRank,
        }
    }
}

/// Factored observation covariance, tied to the observation points and
/// parameters that produced it.
#[derive(Debug, Clone)]
pub struct ObservationFactor {
    solver: LowRankCorrected,
    options: InferenceOptions,
    fingerprint: [u8; 32],
}

#[derive(Serialize)]
struct FingerprintInputs<'a> {
    kernel: &'a KernelHyper,
    tau_dot2: f64,
    phi_dot2: f64,
    split: CovarianceSplit,
}

/// Digest of the inputs an [`ObservationFactor`] depends on.
pub fn observation_fingerprint(
    points: &[PredictionPoint],
    params: &HyperParams,
    options: &InferenceOptions,
) -> [u8; 32] {
    let c = &params.variance_components;
    let inputs = FingerprintInputs {
        kernel: &params.kernel,
        tau_dot2: c.tau_dot2,
        phi_dot2: c.phi_dot2,
        split: options.split,
    };
    klsc::fingerprint(points, &inputs, options.rho)
}

fn site_key(p: &PredictionPoint) -> (u64, u64) {
    (p.site_xy[0].to_bits(), p.site_xy[1].to_bits())
}

impl ObservationFactor {
    pub fn build(points: &[PredictionPoint], params: &HyperParams, options: InferenceOptions) -> Result<Self> {
        params.validate()?;
        if points.is_empty() {
            return Err(Error::arg("no observations to factor"));
        }
        let k = params.kernel;
        let c = params.variance_components;
        let jitter = JITTER_REL * (k.site_var + k.path_var);
        let dist = |i: usize, j: usize| points[i].path_distance(&points[j]);
        let ordering = reverse_maximin(points.len(), dist, EXACT_LIMIT)?;
        let pattern = build_pattern(&ordering, dist, options.rho)?;
        let nu = k.nu;
        let solver = match options.split {
            CovarianceSplit::Full => {
                let theta = |i: usize, j: usize| {
                    let (p, q) = (&points[i], &points[j]);
                    let mut v = kernel_value(p, q, &k);
                    if p.scenario == q.scenario {
                        v += c.tau_dot2;
                    }
                    if i == j {
                        v += c.phi_dot2 + jitter;
                    }
                    v
                };
                let f = factorize(theta, &ordering, &pattern, options.aggregated)?;
                LowRankCorrected::new(f, Vec::new())?
            }
            CovarianceSplit::LowRank => {
                let local = |i: usize, j: usize| {
                    let v = k.path_var * nu.correlation(points[i].path_distance(&points[j]) / k.path_len);
                    if i == j {
                        v + c.phi_dot2 + jitter
                    } else {
                        v
                    }
                };
                let f = factorize(local, &ordering, &pattern, options.aggregated)?;
                let mut terms = Vec::new();
                if k.site_var > 0.0 {
                    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
                    let mut coords: Vec<[f64; 2]> = Vec::new();
                    let group_of: Vec<usize> = points
                        .iter()
                        .map(|p| {
                            *index.entry(site_key(p)).or_insert_with(|| {
                                coords.push(p.site_xy);
                                coords.len() - 1
                            })
                        })
                        .collect();
                    let m = coords.len();
                    let cov = Mat::from_fn(m, m, |a, b| {
                        let d = ((coords[a][0] - coords[b][0]).powi(2) + (coords[a][1] - coords[b][1]).powi(2)).sqrt();
                        let v = k.site_var * nu.correlation(d / k.site_len);
                        if a == b {
                            v + JITTER_REL * k.site_var
                        } else {
                            v
                        }
                    });
                    terms.push(GroupTerm::dense(group_of, &cov)?);
                }
                if c.tau_dot2 > 0.0 {
                    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
                    let group_of: Vec<usize> = points
                        .iter()
                        .map(|p| {
                            let next = index.len();
                            *index.entry(p.scenario).or_insert(next)
                        })
                        .collect();
                    terms.push(GroupTerm::diagonal(group_of, index.len(), c.tau_dot2));
                }
                LowRankCorrected::new(f, terms)?
            }
        };
        Ok(Self {
            solver,
            options,
            fingerprint: observation_fingerprint(points, params, &options),
        })
    }

    pub fn options(&self) -> InferenceOptions {
        self.options
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.solver.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solver.is_empty()
    }

    /// Number of nonzeros in the sparse part.
    pub fn nnz(&self) -> usize {
        self.solver.factor().pattern().nnz()
    }

    /// Rank of the exactly handled low-rank part.
    pub fn rank(&self) -> usize {
        self.solver.rank()
    }

    /// `Θ⁻¹ v`.
    pub fn precision_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.solver.precision_apply(v)
    }

    /// Fails with a staleness error unless the factor was built for exactly
    /// these observations and parameters.
    pub fn check(&self, points: &[PredictionPoint], params: &HyperParams) -> Result<()> {
        if observation_fingerprint(points, params, &self.options) != self.fingerprint {
            return Err(Error::Staleness(
                "factor was built for different observations or hyperparameters; rebuild it".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    Prediction,
    Interpolation,
}

/// Identity of one posterior point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointKey {
    pub scenario: usize,
    pub site: usize,
    /// Set when the point is tied to an observed variation.
    pub variation: Option<usize>,
}

/// Per-point posterior of the residual `y`, with its variance split into
/// parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub mode: PosteriorMode,
    pub keys: Vec<PointKey>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Kernel posterior variance (including the learned part of the
    /// scenario term), clipped at zero.
    pub epistemic: Vec<f64>,
    /// Unlearned scenario-level variance `τ̇²`, shared by every point of an
    /// unobserved scenario.
    pub between_scenario: Vec<f64>,
    /// Event-level variance: `τ̈²`, or its conditional value when the
    /// variation is observed.
    pub between_event: Vec<f64>,
    /// `φ̇² + φ̈²`.
    pub within: Vec<f64>,
    /// Conditional random-effect mean added to `mean`.
    pub random_effect: Vec<f64>,
    /// Points whose kernel variance was clipped at zero.
    pub clipped: usize,
}

impl PosteriorResult {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.epistemic[i] + self.between_scenario[i] + self.between_event[i] + self.within[i]
    }

    /// `(mean, epistemic variance, aleatory variance)` of point `i` for
    /// hazard integration. In prediction mode only the kernel posterior is
    /// epistemic; in interpolation mode the event terms are as well.
    pub fn hazard_moments(&self, i: usize) -> (f64, f64, f64) {
        match self.mode {
            PosteriorMode::Prediction => (
                self.mean[i],
                self.epistemic[i],
                self.between_scenario[i] + self.between_event[i] + self.within[i],
            ),
            PosteriorMode::Interpolation => (
                self.mean[i],
                self.epistemic[i] + self.between_scenario[i] + self.between_event[i],
                self.within[i],
            ),
        }
    }

    /// Between-event covariance of points `i` and `j` (diagonal-only
    /// reporting leaves this block out of `std` cross terms).
    pub fn between_block(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.keys[i], &self.keys[j]);
        if a.scenario != b.scenario {
            return 0.0;
        }
        let mut v = self.between_scenario[i].min(self.between_scenario[j]);
        if a.variation == b.variation {
            v += self.between_event[i];
        }
        v
    }
}

fn check_points(points: &[PredictionPoint]) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if !(p.site_xy.iter().chain(&p.source_xy).all(|v| v.is_finite())) {
            return Err(Error::arg(format!("prediction point {i} has non-finite coordinates")));
        }
    }
    Ok(())
}

fn cross_row(p: &PredictionPoint, obs: &[PredictionPoint], params: &HyperParams) -> Vec<f64> {
    let t = params.variance_components.tau_dot2;
    obs.iter()
        .map(|q| {
            let v = kernel_value(p, q, &params.kernel);
            if p.scenario == q.scenario {
                v + t
            } else {
                v
            }
        })
        .collect()
}

/// Prediction mode: every point is a new event.
pub fn predict(
    obs: &ScenarioMeanTable,
    pred: &[PredictionPoint],
    params: &HyperParams,
    factor: &ObservationFactor,
) -> Result<PosteriorResult> {
    predict_points(&obs.points(), &obs.values(), pred, params, factor)
}

/// [`predict`] on raw observation points and values.
pub fn predict_points(
    obs_points: &[PredictionPoint],
    obs_values: &[f64],
    pred: &[PredictionPoint],
    params: &HyperParams,
    factor: &ObservationFactor,
) -> Result<PosteriorResult> {
    if obs_points.len() != obs_values.len() {
        return Err(Error::arg("observation points and values differ in length"));
    }
    factor.check(obs_points, params)?;
    check_points(pred)?;
    let c = params.variance_components;
    let kvar = params.kernel.site_var + params.kernel.path_var;
    let observed: BTreeSet<usize> = obs_points.iter().map(|p| p.scenario).collect();
    let z = factor.precision_apply(obs_values)?;
    let per: Vec<Result<(f64, f64, bool)>> = pred
        .par_iter()
        .map(|p| {
            let k = cross_row(p, obs_points, params);
            let seen = observed.contains(&p.scenario);
            let prior = if seen { kvar + c.tau_dot2 } else { kvar };
            let mean: f64 = k.iter().zip(&z).map(|(a, b)| a * b).sum();
            let raw = prior - factor.solver.quad_form(&k)?;
            Ok((mean, raw.max(0.0), raw < 0.0))
        })
        .collect();
    let n = pred.len();
    let mut out = PosteriorResult {
        mode: PosteriorMode::Prediction,
        keys: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
        epistemic: Vec::with_capacity(n),
        between_scenario: Vec::with_capacity(n),
        between_event: vec![c.tau_ddot2; n],
        within: vec![c.phi_dot2 + c.phi_ddot2; n],
        random_effect: vec![0.0; n],
        clipped: 0,
    };
    for (p, r) in pred.iter().zip(per) {
        let (mean, epi, clipped) = r?;
        out.keys.push(PointKey {
            scenario: p.scenario,
            site: p.site,
            variation: None,
        });
        out.mean.push(mean);
        out.epistemic.push(epi);
        out.between_scenario.push(if observed.contains(&p.scenario) { 0.0 } else { c.tau_dot2 });
        out.clipped += clipped as usize;
    }
    out.std = (0..n).map(|i| out.variance(i).sqrt()).collect();
    Ok(out)
}

/// Interpolation mode: points tied to an observed variation receive the
/// conditional random effect of that variation. `variations[i] = None` or an
/// unobserved variation leaves point `i` at its prediction-mode value.
pub fn interpolate(
    obs_catalog: &ResidualCatalog,
    pred: &[PredictionPoint],
    variations: &[Option<usize>],
    params: &HyperParams,
    factor: &ObservationFactor,
) -> Result<PosteriorResult> {
    let table = collapse_to_means(obs_catalog)?;
    interpolate_with_table(obs_catalog, &table, pred, variations, params, factor)
}

/// [`interpolate`] with a precomputed scenario-mean table of `obs_catalog`.
pub fn interpolate_with_table(
    obs_catalog: &ResidualCatalog,
    table: &ScenarioMeanTable,
    pred: &[PredictionPoint],
    variations: &[Option<usize>],
    params: &HyperParams,
    factor: &ObservationFactor,
) -> Result<PosteriorResult> {
    if variations.len() != pred.len() {
        return Err(Error::arg("one variation entry per prediction point is required"));
    }
    for (i, (p, v)) in pred.iter().zip(variations).enumerate() {
        if let Some(v) = v {
            let scen = obs_catalog.variations().get(*v).map(|x| x.scenario);
            if scen != Some(p.scenario) {
                return Err(Error::arg(format!(
                    "prediction point {i}: variation {v} does not belong to scenario {}",
                    p.scenario
                )));
            }
        }
    }
    let mut out = predict(table, pred, params, factor)?;
    out.mode = PosteriorMode::Interpolation;
    let c = params.variance_components;
    let events = catalog_deviations(obs_catalog, table)?;
    let effects = condition_random_effects(&events, c.tau_ddot2, c.phi_ddot2);
    for (i, v) in variations.iter().enumerate() {
        let Some(v) = *v else { continue };
        let Some(var) = effects.variance(v) else { continue };
        let shift = effects.mean(v);
        out.keys[i].variation = Some(v);
        out.random_effect[i] = shift;
        out.mean[i] += shift;
        out.between_event[i] = var;
        out.std[i] = out.variance(i).sqrt();
    }
    Ok(out)
}

/// Dense posterior covariance of the kernel part (including the learned
/// scenario term) over at most [`DENSE_COVARIANCE_LIMIT`] points.
pub fn posterior_covariance(
    obs_points: &[PredictionPoint],
    pred: &[PredictionPoint],
    params: &HyperParams,
    factor: &ObservationFactor,
) -> Result<Mat<f64>> {
    if pred.len() > DENSE_COVARIANCE_LIMIT {
        return Err(Error::Size(format!(
            "dense posterior covariance limited to {DENSE_COVARIANCE_LIMIT} points, got {}",
            pred.len()
        )));
    }
    factor.check(obs_points, params)?;
    let t = params.variance_components.tau_dot2;
    let observed: BTreeSet<usize> = obs_points.iter().map(|p| p.scenario).collect();
    let cross: Vec<Vec<f64>> = pred.par_iter().map(|p| cross_row(p, obs_points, params)).collect();
    let solved: Vec<Vec<f64>> = cross
        .par_iter()
        .map(|k| factor.precision_apply(k))
        .collect::<Result<_>>()?;
    let m = pred.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|a| {
            (0..m)
                .map(|b| {
                    let mut prior = kernel_value(&pred[a], &pred[b], &params.kernel);
                    if pred[a].scenario == pred[b].scenario && observed.contains(&pred[a].scenario) {
                        prior += t;
                    }
                    prior - cross[a].iter().zip(&solved[b]).map(|(x, y)| x * y).sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(Mat::from_fn(m, m, |a, b| 0.5 * (rows[a][b] + rows[b][a])))
}

/// CSV of a posterior with site and scenario ids from `sites`/`scenarios`
/// and variation ids from `variations` (empty when none are keyed).
pub fn posterior_csv(
    result: &PosteriorResult,
    sites: &[Site],
    scenarios: &[RuptureScenario],
    variations: &[RuptureVariation],
) -> Result<String> {
    let mut out = String::from(
        "# units: mean and random_effect in ln-units; std in ln-units; variances in ln-units^2\n\
         scenario_id,site_id,variation_id,mean,std,epistemic,between_scenario,between_event,within,random_effect\n",
    );
    for (i, k) in result.keys.iter().enumerate() {
        let (Some(sc), Some(st)) = (scenarios.get(k.scenario), sites.get(k.site)) else {
            return Err(Error::arg(format!("posterior point {i} references an unknown site or scenario")));
        };
        let var = match k.variation {
            Some(v) => variations
                .get(v)
                .map(|x| x.variation_id.as_str())
                .ok_or_else(|| Error::arg(format!("posterior point {i} references an unknown variation")))?,
            None => "",
        };
        out.push_str(&format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            sc.scenario_id,
            st.site_id,
            var,
            result.mean[i],
            result.std[i],
            result.epistemic[i],
            result.between_scenario[i],
            result.between_event[i],
            result.within[i],
            result.random_effect[i]
        ));
    }
    Ok(out)
}

/// Correlated residual-field realizations at the posterior's points: kernel
/// posterior draw from `epistemic_cov`, one scenario shift per unobserved
/// scenario, one event shift per event, and independent within-event noise.
pub fn sample_fields(
    result: &PosteriorResult,
    epistemic_cov: &Mat<f64>,
    n_realizations: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let m = result.len();
    if epistemic_cov.nrows() != m || epistemic_cov.ncols() != m {
        return Err(Error::arg("covariance does not match the posterior points"));
    }
    let chol = jittered_cholesky(epistemic_cov)?;
    let mut scen_slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut event_slot: BTreeMap<(usize, Option<usize>), usize> = BTreeMap::new();
    for k in &result.keys {
        let n = scen_slot.len();
        scen_slot.entry(k.scenario).or_insert(n);
        let n = event_slot.len();
        event_slot.entry((k.scenario, k.variation)).or_insert(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_realizations);
    for _ in 0..n_realizations {
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zs: Vec<f64> = (0..scen_slot.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ze: Vec<f64> = (0..event_slot.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let zw: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let corr = chol.correlate(&z);
        let field = (0..m)
            .map(|i| {
                let k = &result.keys[i];
                result.mean[i]
                    + corr[i]
                    + result.between_scenario[i].sqrt() * zs[scen_slot[&k.scenario]]
                    + result.between_event[i].sqrt() * ze[event_slot[&(k.scenario, k.variation)]]
                    + result.within[i].sqrt() * zw[i]
            })
            .collect();
        out.push(field);
    }
    Ok(out)
}

fn jittered_cholesky(a: &Mat<f64>) -> Result<DenseCholesky> {
    let m = a.nrows();
    let scale = (0..m).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut eps = 0.0;
    loop {
        let b = Mat::from_fn(m, m, |i, j| if i == j { a[(i, j)] + eps } else { a[(i, j)] });
        match DenseCholesky::new(&b) {
            Ok(c) => return Ok(c),
            Err(e) if eps > 1e-4 * scale => return Err(e),
            Err(_) => eps = if eps == 0.0 { 1e-12 * scale } else { eps * 10.0 },
        }
    }
}

/// Error statistics of one data group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n_records: usize,
    pub n_cells: usize,
    pub rmse_y: f64,
    pub rmse_ybar: f64,
    pub mean_std: f64,
    /// RMSE of the backbone, i.e. of the residuals themselves.
    pub backbone_rmse: f64,
    /// `1 − rmse_y / backbone_rmse`.
    pub reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    /// `None` when no truth record of the group has a prediction.
    pub stats: Option<GroupStats>,
}

/// Scores `result` against every truth record that has a matching
/// prediction: by (variation, site) for interpolated points, otherwise by
/// (scenario, site).
pub fn evaluate_groups(
    truth: &ResidualCatalog,
    result: &PosteriorResult,
    split: &SplitAssignment,
) -> Result<Vec<GroupMetrics>> {
    if split.site_roles.len() != truth.sites().len() || split.scenario_roles.len() != truth.scenarios().len() {
        return Err(Error::arg("split does not match the truth catalog"));
    }
    let mut by_variation: HashMap<(usize, usize), usize> = HashMap::new();
    let mut by_cell: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, k) in result.keys.iter().enumerate() {
        match k.variation {
            Some(v) => by_variation.entry((v, k.site)).or_insert(i),
            None => by_cell.entry((k.scenario, k.site)).or_insert(i),
        };
    }
    #[derive(Default, Clone, Copy)]
    struct Acc {
        n: usize,
        se: f64,
        y2: f64,
        std: f64,
    }
    let mut acc = [Acc::default(); 4];
    // (scenario, site) -> (Σy, Σmean, n)
    let mut cells: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in truth.records() {
        let l = truth.scenario_of(r);
        let idx = by_variation
            .get(&(r.variation, r.site))
            .or_else(|| by_cell.get(&(l, r.site)));
        let Some(&i) = idx else { continue };
        let g = Group::ALL.iter().position(|g| *g == split.group(l, r.site)).unwrap_or(0);
        let a = &mut acc[g];
        let e = r.y - result.mean[i];
        a.n += 1;
        a.se += e * e;
        a.y2 += r.y * r.y;
        a.std += result.std[i];
        let c = cells.entry((l, r.site)).or_insert((0.0, 0.0, 0));
        c.0 += r.y;
        c.1 += result.mean[i];
        c.2 += 1;
    }
    let mut cell_acc = [(0usize, 0.0f64); 4];
    for (&(l, s), &(sy, sm, n)) in &cells {
        let g = Group::ALL.iter().position(|g| *g == split.group(l, s)).unwrap_or(0);
        let d = (sy - sm) / n as f64;
        cell_acc[g].0 += 1;
        cell_acc[g].1 += d * d;
    }
    Ok(Group::ALL
        .iter()
        .enumerate()
        .map(|(g, &group)| {
            let a = acc[g];
            let stats = (a.n > 0).then(|| {
                let n = a.n as f64;
                let rmse_y = (a.se / n).sqrt();
                let backbone_rmse = (a.y2 / n).sqrt();
                GroupStats {
                    n_records: a.n,
                    n_cells: cell_acc[g].0,
                    rmse_y,
                    rmse_ybar: (cell_acc[g].1 / cell_acc[g].0 as f64).sqrt(),
                    mean_std: a.std / n,
                    backbone_rmse,
                    reduction: if backbone_rmse > 0.0 { 1.0 - rmse_y / backbone_rmse } else { 0.0 },
                }
            });
            GroupMetrics { group, stats }
        })
        .collect())
}
