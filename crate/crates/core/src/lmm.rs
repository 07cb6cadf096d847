//! Random-intercept linear mixed model for the primary aleatory components.
//!
//! Each event contributes `N(0, τ²·11ᵀ + φ²·I)`. The covariance is a rank-1
//! update of a scaled identity, so the log-density depends on the data only
//! through the event count, sum and within-event sum of squares.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ResidualCatalog, ScenarioMeanTable};
use crate::error::{Error, Result};
use crate::optim::{minimize_box, BfgsOptions};
use crate::stats::LN_2PI;

/// The four aleatory variance components, in ln-units².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Primary between-event variance.
    pub tau_ddot2: f64,
    /// Primary within-event variance.
    pub phi_ddot2: f64,
    /// Secondary between-event variance (GP noise, scenario block).
    pub tau_dot2: f64,
    /// Secondary within-event variance (GP noise, diagonal).
    pub phi_dot2: f64,
}

impl VarianceComponents {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_ddot2", self.tau_ddot2),
            ("phi_ddot2", self.phi_ddot2),
            ("tau_dot2", self.tau_dot2),
            ("phi_dot2", self.phi_dot2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sufficient statistics of one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub variation: usize,
    pub n: usize,
    /// Sum of the event's deviations.
    pub mu: f64,
    /// Within-event sum of squares about the event mean.
    pub s2: f64,
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
    sum: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
}

/// One-pass per-event summaries of `(variation, deviation)` pairs, sorted by
/// variation index.
pub fn summarize_events(deviations: impl IntoIterator<Item = (usize, f64)>) -> Vec<EventSummary> {
    let mut acc: BTreeMap<usize, Welford> = BTreeMap::new();
    for (v, x) in deviations {
        acc.entry(v).or_default().push(x);
    }
    acc.into_iter()
        .map(|(variation, w)| EventSummary {
            variation,
            n: w.n,
            mu: w.sum,
            s2: if w.n == 1 { 0.0 } else { w.m2.max(0.0) },
        })
        .collect()
}

/// Event summaries of the deviations `y_es − ȳ_ls` of every record from
/// its scenario mean at the same site.
pub fn catalog_deviations(catalog: &ResidualCatalog, table: &ScenarioMeanTable) -> Result<Vec<EventSummary>> {
    let mut devs = Vec::with_capacity(catalog.len());
    for r in catalog.records() {
        let l = catalog.scenario_of(r);
        let cell = table.lookup(l, r.site).ok_or_else(|| {
            Error::arg(format!(
                "no scenario mean for scenario `{}` at site `{}`",
                catalog.scenarios()[l].scenario_id,
                catalog.sites()[r.site].site_id
            ))
        })?;
        devs.push((r.variation, r.y - cell.y_bar));
    }
    Ok(summarize_events(devs))
}

/// Record-weighted mean of `(V − 1)/V` over the cells of `table`, where `V`
/// is the number of variations in a record's cell. Centering on the cell
/// mean shrinks both variance components by this factor in balanced
/// designs; dividing the fitted components by it undoes the shrinkage.
pub fn centering_factor(table: &ScenarioMeanTable) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in &table.records {
        let v = r.n_variations as f64;
        num += v - 1.0;
        den += v;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

const CHUNK: usize = 1024;

#[inline]
fn event_terms(e: &EventSummary, tau2: f64, phi2: f64) -> (f64, f64, f64) {
    let n = e.n as f64;
    let a = phi2 + n * tau2;
    let mu2 = e.mu * e.mu;
    let ll = -0.5 * (a.ln() + (n - 1.0) * phi2.ln() + mu2 / (n * a) + e.s2 / phi2) - 0.5 * n * LN_2PI;
    let d_tau = -0.5 * (n / a - mu2 / (a * a));
    let d_phi = -0.5 * (1.0 / a + (n - 1.0) / phi2 - mu2 / (n * a * a) - e.s2 / (phi2 * phi2));
    (ll, d_tau, d_phi)
}

/// Sums over fixed-size chunks, then over chunk totals in order, so the
/// result does not depend on the worker count.
fn chunked_sum(
    summaries: &[EventSummary],
    tau2: f64,
    phi2: f64,
) -> (f64, f64, f64) {
    let parts: Vec<(f64, f64, f64)> = summaries
        .par_chunks(CHUNK)
        .map(|c| {
            c.iter().fold((0.0, 0.0, 0.0), |acc, e| {
                let t = event_terms(e, tau2, phi2);
                (acc.0 + t.0, acc.1 + t.1, acc.2 + t.2)
            })
        })
        .collect();
    parts
        .into_iter()
        .fold((0.0, 0.0, 0.0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2))
}

/// Exact Gaussian log-likelihood, including the `-(N/2) ln 2π` constant.
pub fn loglik(summaries: &[EventSummary], tau2: f64, phi2: f64) -> Result<f64> {
    check_args(tau2, phi2)?;
    Ok(chunked_sum(summaries, tau2, phi2).0)
}

/// Log-likelihood and its gradient with respect to `(τ², φ²)`.
pub fn loglik_grad(summaries: &[EventSummary], tau2: f64, phi2: f64) -> Result<(f64, [f64; 2])> {
    check_args(tau2, phi2)?;
    let (ll, dt, dp) = chunked_sum(summaries, tau2, phi2);
    Ok((ll, [dt, dp]))
}

fn check_args(tau2: f64, phi2: f64) -> Result<()> {
    if !(phi2 > 0.0) || !phi2.is_finite() {
        return Err(Error::Domain(format!("within-event variance must be > 0, got {phi2}")));
    }
    if !(tau2 >= 0.0) || !tau2.is_finite() {
        return Err(Error::Domain(format!("between-event variance must be >= 0, got {tau2}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for LmmBounds {
    fn default() -> Self {
        Self {
            lower: 1e-8,
            upper: 1e2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub tau2: f64,
    pub phi2: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Projected gradient infinity norm in log-parameter space, per record.
    pub grad_norm: f64,
}

/// Moment estimates used as the default starting point.
pub fn moment_init(summaries: &[EventSummary]) -> (f64, f64) {
    let (mut ss_within, mut dof, mut sq_means, mut inv_n, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for e in summaries {
        let n = e.n as f64;
        ss_within += e.s2;
        dof += n - 1.0;
        let m = e.mu / n;
        sq_means += m * m;
        inv_n += 1.0 / n;
        k += 1.0;
    }
    let phi2 = if dof > 0.0 { ss_within / dof } else { 1.0 };
    let tau2 = (sq_means / k - phi2 * inv_n / k).max(0.1 * phi2);
    (tau2, phi2)
}

/// Bounded maximum-likelihood fit of `(τ², φ²)` over log-parameters.
pub fn fit_mle(
    summaries: &[EventSummary],
    init: Option<(f64, f64)>,
    bounds: LmmBounds,
) -> Result<LmmFit> {
    if summaries.len() < 2 {
        return Err(Error::Unidentifiable(format!(
            "need at least 2 events, got {}",
            summaries.len()
        )));
    }
    if summaries.iter().all(|e| e.n < 2) {
        return Err(Error::Unidentifiable(
            "every event has a single record; between- and within-event variance cannot be separated".into(),
        ));
    }
    if !(bounds.lower > 0.0 && bounds.upper > bounds.lower) {
        return Err(Error::arg("LMM bounds must satisfy 0 < lower < upper"));
    }
    let mut sorted = summaries.to_vec();
    sorted.sort_by_key(|e| e.variation);
    let n_total: f64 = sorted.iter().map(|e| e.n as f64).sum();

    let (t0, p0) = init.unwrap_or_else(|| moment_init(&sorted));
    let lo = [bounds.lower.ln(); 2];
    let hi = [bounds.upper.ln(); 2];
    let x0 = [t0.max(bounds.lower).ln(), p0.max(bounds.lower).ln()];
    let objective = |x: &[f64]| {
        let (t, p) = (x[0].exp(), x[1].exp());
        let (ll, dt, dp) = chunked_sum(&sorted, t, p);
        (-ll / n_total, vec![-dt * t / n_total, -dp * p / n_total])
    };
    let rep = minimize_box(
        objective,
        &x0,
        &lo,
        &hi,
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-10,
            f_tol: 0.0,
        },
    );
    let (tau2, phi2) = (rep.x[0].exp(), rep.x[1].exp());
    Ok(LmmFit {
        tau2,
        phi2,
        loglik: -rep.f * n_total,
        converged: rep.converged,
        iterations: rep.iterations,
        grad_norm: rep.grad_norm,
    })
}

/// Conditional mean and variance of each observed event's random intercept.
#[derive(Debug, Clone, Default)]
pub struct RandomEffects {
    effects: BTreeMap<usize, (f64, f64, usize)>,
}

impl RandomEffects {
    /// Shrinkage mean; zero for unobserved variations.
    pub fn mean(&self, variation: usize) -> f64 {
        self.effects.get(&variation).map_or(0.0, |e| e.0)
    }

    /// Conditional variance; `None` for unobserved variations.
    pub fn variance(&self, variation: usize) -> Option<f64> {
        self.effects.get(&variation).map(|e| e.1)
    }

    pub fn count(&self, variation: usize) -> usize {
        self.effects.get(&variation).map_or(0, |e| e.2)
    }

    pub fn contains(&self, variation: usize) -> bool {
        self.effects.contains_key(&variation)
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// Blockwise conditional expectation of the random intercept:
/// `τ²·μ / (φ² + nτ²)` with variance `τ²φ² / (φ² + nτ²)`.
pub fn condition_random_effects(summaries: &[EventSummary], tau2: f64, phi2: f64) -> RandomEffects {
    let effects = summaries
        .iter()
        .map(|e| {
            let a = phi2 + e.n as f64 * tau2;
            let (m, v) = if a > 0.0 { (tau2 * e.mu / a, tau2 * phi2 / a) } else { (0.0, 0.0) };
            (e.variation, (m, v, e.n))
        })
        .collect();
    RandomEffects { effects }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_pairs() {
        let s = summarize_events([(0, 1.0), (0, 3.0), (1, 5.0)]);
        assert_eq!(s[0], EventSummary { variation: 0, n: 2, mu: 4.0, s2: 2.0 });
        assert_eq!(s[1], EventSummary { variation: 1, n: 1, mu: 5.0, s2: 0.0 });
    }

    #[test]
    fn standard_normal_at_zero() {
        let s = summarize_events([(0, 0.0)]);
        assert!((loglik(&s, 0.0, 1.0).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        assert!(loglik(&s, 0.1, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_difference() {
        let s = summarize_events([(0, 0.3), (0, -0.1), (0, 0.5), (1, -0.4), (1, -0.2)]);
        let (t, p, h) = (0.07, 0.05, 1e-7);
        let (_, g) = loglik_grad(&s, t, p).unwrap();
        let ft = (loglik(&s, t + h, p).unwrap() - loglik(&s, t - h, p).unwrap()) / (2.0 * h);
        let fp = (loglik(&s, t, p + h).unwrap() - loglik(&s, t, p - h).unwrap()) / (2.0 * h);
        assert!((g[0] - ft).abs() < 1e-6 && (g[1] - fp).abs() < 1e-6);
    }

    #[test]
    fn shrinkage_two_records() {
        let s = [EventSummary { variation: 3, n: 2, mu: 1.0, s2: 0.0 }];
        let r = condition_random_effects(&s, 0.05, 0.05);
        assert!((r.mean(3) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.mean(4), 0.0);
        assert_eq!(r.variance(4), None);
    }

    #[test]
    fn singletons_unidentifiable() {
        let s = summarize_events([(0, 0.1), (1, 0.2), (2, -0.3)]);
        assert!(matches!(fit_mle(&s, None, LmmBounds::default()), Err(Error::Unidentifiable(_))));
    }
}
