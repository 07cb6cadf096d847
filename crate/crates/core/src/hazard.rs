//! Annual exceedance-rate curves at a site: ergodic closed form, non-ergodic
//! with epistemic realizations, and empirical counting over variations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inference::PosteriorResult;
use crate::stats::normal_sf;

/// Ascending, positive PSA levels in g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::arg("intensity grid is empty"));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::arg("intensity levels must be positive and finite"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("intensity levels must be strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::arg("log-spaced grid needs 0 < lo < hi and n >= 2"));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut v: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
        v[0] = lo;
        v[n - 1] = hi;
        Self::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for IntensityGrid {
    fn default() -> Self {
        Self::log_spaced(1e-3, 3.0, 40).expect("valid default grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Gmm,
    Ngmm,
    /// Closed-form non-ergodic curve with the epistemic variance integrated.
    NgmmAnalytic,
    Empirical,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Gmm => "gmm",
            Estimator::Ngmm => "ngmm",
            Estimator::NgmmAnalytic => "ngmm_analytic",
            Estimator::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub grid: IntensityGrid,
    /// Annual exceedance rates, one per grid level.
    pub rates: Vec<f64>,
    pub estimator: Estimator,
    /// Realization bundle, `realizations × grid`.
    pub realizations: Option<Vec<Vec<f64>>>,
}

impl HazardCurve {
    fn checked(grid: &IntensityGrid, rates: Vec<f64>, estimator: Estimator) -> Result<Self> {
        check_monotone(&rates, estimator.name())?;
        Ok(Self {
            grid: grid.clone(),
            rates,
            estimator,
            realizations: None,
        })
    }
}

fn check_monotone(rates: &[f64], what: &str) -> Result<()> {
    if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(Error::Validity(format!("{what} curve has negative or non-finite rates")));
    }
    if let Some(i) = rates.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::Validity(format!("{what} curve increases between grid levels {i} and {}", i + 1)));
    }
    Ok(())
}

/// Lognormal ground-motion distribution of one scenario at the site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMotion {
    /// Annual rate of the scenario.
    pub rate: f64,
    /// Mean of ln PSA.
    pub mu: f64,
    /// Standard deviation of ln PSA.
    pub sigma: f64,
}

/// Non-ergodic ground-motion moments of one scenario at the site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgmmScenario {
    pub rate: f64,
    /// Backbone ln-median plus the posterior mean adjustment.
    pub mu: f64,
    /// Variance of the adjusted median.
    pub epistemic_var: f64,
    /// Variance of ln PSA about the adjusted median.
    pub aleatory_var: f64,
}

impl NgmmScenario {
    /// Builds the moments from a backbone median and posterior point `i`.
    pub fn from_posterior(rate: f64, backbone_mu: f64, posterior: &PosteriorResult, i: usize) -> Self {
        let (m, epi, ale) = posterior.hazard_moments(i);
        Self {
            rate,
            mu: backbone_mu + m,
            epistemic_var: epi,
            aleatory_var: ale,
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate >= 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::arg("scenario rates must be finite and >= 0"))
    }
}

fn sum_curve(grid: &IntensityGrid, scen: impl Iterator<Item = (f64, f64, f64)> + Clone) -> Vec<f64> {
    grid.values
        .iter()
        .map(|x| {
            let lx = x.ln();
            scen.clone().map(|(rate, mu, sd)| rate * normal_sf((lx - mu) / sd)).sum()
        })
        .collect()
}

/// Ergodic curve `Σ λ_i (1 − Φ((ln x − μ_i)/σ_i))`.
pub fn gmm_curve(scenarios: &[ScenarioMotion], grid: &IntensityGrid) -> Result<HazardCurve> {
    for s in scenarios {
        check_rate(s.rate)?;
        if !(s.sigma > 0.0 && s.sigma.is_finite() && s.mu.is_finite()) {
            return Err(Error::arg("ground-motion sigma must be positive and mu finite"));
        }
    }
    let rates = sum_curve(grid, scenarios.iter().map(|s| (s.rate, s.mu, s.sigma)));
    HazardCurve::checked(grid, rates, Estimator::Gmm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Stratified standard-normal draws, independently permuted per scenario.
    LatinHypercube,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgmmOptions {
    pub n_realizations: usize,
    pub seed: u64,
    pub summary: Summary,
    pub sampling: Sampling,
}

impl Default for NgmmOptions {
    fn default() -> Self {
        Self {
            n_realizations: 1000,
            seed: 0,
            summary: Summary::Median,
            sampling: Sampling::LatinHypercube,
        }
    }
}

/// Non-ergodic curves of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgmmCurves {
    /// Pointwise summary of the realizations; carries the bundle.
    pub curve: HazardCurve,
    /// Pointwise mean of the realizations.
    pub mean: Vec<f64>,
    /// Closed form with `σ = √(aleatory + epistemic)`.
    pub analytic: HazardCurve,
}

/// `n × n_scenarios` standard-normal scores, row per realization.
fn draw_scores(n: usize, n_scen: usize, seed: u64, sampling: Sampling) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![vec![0.0; n_scen]; n];
    match sampling {
        Sampling::Random => {
            for row in z.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.sample(rand_distr::StandardNormal);
                }
            }
        }
        Sampling::LatinHypercube => {
            let std = Normal::standard();
            let mut perm: Vec<usize> = (0..n).collect();
            for s in 0..n_scen {
                perm.shuffle(&mut rng);
                for (r, &k) in perm.iter().enumerate() {
                    let u: f64 = rng.random::<f64>();
                    let p = ((k as f64 + u) / n as f64).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    z[r][s] = std.inverse_cdf(p);
                }
            }
        }
    }
    z
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Non-ergodic curve: each realization draws every scenario median once
/// from its epistemic normal, independently across scenarios.
pub fn ngmm_curve(scenarios: &[NgmmScenario], grid: &IntensityGrid, options: &NgmmOptions) -> Result<NgmmCurves> {
    let n = options.n_realizations;
    if n == 0 {
        return Err(Error::arg("need at least one realization"));
    }
    if n < 2 && options.summary == Summary::Median {
        return Err(Error::arg("median summary needs at least 2 realizations"));
    }
    for s in scenarios {
        check_rate(s.rate)?;
        if !(s.mu.is_finite() && s.epistemic_var >= 0.0 && s.aleatory_var > 0.0) {
            return Err(Error::arg("non-ergodic moments need finite mu, epistemic >= 0, aleatory > 0"));
        }
    }
    let z = draw_scores(n, scenarios.len(), options.seed, options.sampling);
    let bundle: Vec<Vec<f64>> = z
        .par_iter()
        .map(|zr| {
            sum_curve(
                grid,
                scenarios
                    .iter()
                    .zip(zr)
                    .map(|(s, z)| (s.rate, s.mu + s.epistemic_var.sqrt() * z, s.aleatory_var.sqrt())),
            )
        })
        .collect();
    for (r, c) in bundle.iter().enumerate() {
        check_monotone(c, &format!("realization {r}"))?;
    }
    let m = grid.len();
    let mean: Vec<f64> = (0..m).map(|j| bundle.iter().map(|c| c[j]).sum::<f64>() / n as f64).collect();
    let summary = match options.summary {
        Summary::Mean => mean.clone(),
        Summary::Median => (0..m)
            .map(|j| {
                let mut col: Vec<f64> = bundle.iter().map(|c| c[j]).collect();
                median(&mut col)
            })
            .collect(),
    };
    let mut curve = HazardCurve::checked(grid, summary, Estimator::Ngmm)?;
    curve.realizations = Some(bundle);
    let analytic = HazardCurve::checked(
        grid,
        sum_curve(
            grid,
            scenarios.iter().map(|s| (s.rate, s.mu, (s.aleatory_var + s.epistemic_var).sqrt())),
        ),
        Estimator::NgmmAnalytic,
    )?;
    Ok(NgmmCurves { curve, mean, analytic })
}

/// One scenario's rate and its per-variation PSA values (g).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSample {
    pub rate: f64,
    pub values: Vec<f64>,
}

/// Rate-weighted fraction of variations strictly exceeding each level.
pub fn empirical_curve(scenarios: &[ScenarioSample], grid: &IntensityGrid) -> Result<HazardCurve> {
    for s in scenarios {
        check_rate(s.rate)?;
        if s.values.is_empty() {
            return Err(Error::arg("every scenario needs at least one variation value"));
        }
        if s.values.iter().any(|v| v.is_nan()) {
            return Err(Error::arg("variation values must not be NaN"));
        }
    }
    let rates = grid
        .values
        .iter()
        .map(|&x| {
            scenarios
                .iter()
                .map(|s| s.rate * s.values.iter().filter(|&&v| v > x).count() as f64 / s.values.len() as f64)
                .sum()
        })
        .collect();
    HazardCurve::checked(grid, rates, Estimator::Empirical)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Largest pointwise absolute difference.
    Ks,
    /// Absolute difference averaged over ln x (trapezoid rule).
    Mae,
}

pub fn curve_distance(a: &HazardCurve, b: &HazardCurve, metric: Metric) -> Result<f64> {
    if a.grid != b.grid || a.rates.len() != b.rates.len() {
        return Err(Error::arg("curves are on different intensity grids"));
    }
    let d: Vec<f64> = a.rates.iter().zip(&b.rates).map(|(x, y)| (x - y).abs()).collect();
    match metric {
        Metric::Ks => Ok(d.iter().copied().fold(0.0, f64::max)),
        Metric::Mae => {
            let x = a.grid.values();
            if x.len() < 2 {
                return Err(Error::arg("mean absolute error needs at least 2 grid levels"));
            }
            let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
            let area: f64 = (1..x.len()).map(|i| 0.5 * (d[i] + d[i - 1]) * (lx[i] - lx[i - 1])).sum();
            Ok(area / (lx[lx.len() - 1] - lx[0]))
        }
    }
}

/// CSV of several curves on a shared grid, one column per curve.
pub fn curves_csv(curves: &[&HazardCurve]) -> Result<String> {
    let Some(first) = curves.first() else {
        return Err(Error::arg("no curves to write"));
    };
    if curves.iter().any(|c| c.grid != first.grid) {
        return Err(Error::arg("curves are on different intensity grids"));
    }
    let mut out = String::from("# units: psa_g in g; rate_* in 1/year\n");
    out.push_str("psa_g");
    for c in curves {
        out.push_str(",rate_");
        out.push_str(c.estimator.name());
    }
    out.push('\n');
    for (j, x) in first.grid.values().iter().enumerate() {
        out.push_str(&format!("{x:.9e}"));
        for c in curves {
            out.push_str(&format!(",{:.9e}", c.rates[j]));
        }
        out.push('\n');
    }
    Ok(out)
}
