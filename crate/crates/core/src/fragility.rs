//! Lognormal fragility curves translated from PGA to PSA, and multinomial
//! damage-state sampling under ground-motion field realizations.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageState {
    pub name: String,
    /// Median PGA capacity in g.
    pub median_g: f64,
    /// Log-dispersion.
    pub beta: f64,
}

/// Ordered damage states, least to most severe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilitySet {
    states: Vec<DamageState>,
}

impl FragilitySet {
    pub fn new(states: Vec<DamageState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::arg("fragility set has no damage states"));
        }
        for s in &states {
            if !(s.median_g > 0.0 && s.median_g.is_finite()) {
                return Err(Error::arg(format!("state `{}`: median must be positive", s.name)));
            }
            if !(s.beta > 0.0 && s.beta.is_finite()) {
                return Err(Error::arg(format!("state `{}`: beta must be positive", s.name)));
            }
        }
        for w in states.windows(2) {
            if w[1].median_g <= w[0].median_g {
                return Err(Error::arg(format!(
                    "medians must increase with severity: `{}` >= `{}`",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[DamageState] {
        &self.states
    }

    /// Number of damage states, excluding `none`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Outcome labels: `none` followed by the state names.
    pub fn labels(&self) -> Vec<String> {
        std::iter::once("none".to_string())
            .chain(self.states.iter().map(|s| s.name.clone()))
            .collect()
    }

    /// Example five-outcome set for anchored substations (illustrative
    /// values, not tabulated data). A shared dispersion keeps the curves
    /// from crossing at any intensity.
    pub fn example() -> Self {
        let s = |name: &str, median_g: f64, beta: f64| DamageState {
            name: name.into(),
            median_g,
            beta,
        };
        Self::new(vec![
            s("slight", 0.15, 0.6),
            s("moderate", 0.29, 0.6),
            s("extensive", 0.45, 0.6),
            s("complete", 0.90, 0.6),
        ])
        .expect("valid example set")
    }
}

/// Fragility set with medians expressed in PSA for one facility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatedSet {
    pub names: Vec<String>,
    pub medians: Vec<f64>,
    pub betas: Vec<f64>,
}

/// Scales every median by the facility's design-spectrum ratio.
pub fn translate(set: &FragilitySet, ratio: f64) -> Result<TranslatedSet> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::arg(format!("design-spectrum ratio must be positive, got {ratio}")));
    }
    Ok(TranslatedSet {
        names: set.states.iter().map(|s| s.name.clone()).collect(),
        medians: set.states.iter().map(|s| s.median_g * ratio).collect(),
        betas: set.states.iter().map(|s| s.beta).collect(),
    })
}

impl TranslatedSet {
    /// `P(DS ≥ ds_k | psa)` per state.
    pub fn exceedance(&self, psa: f64) -> Vec<f64> {
        let lx = psa.ln();
        self.medians
            .iter()
            .zip(&self.betas)
            .map(|(m, b)| normal_cdf((lx - m.ln()) / b))
            .collect()
    }
}

/// Probabilities of `none, ds_1, …, ds_K` at `psa` (g).
pub fn state_probabilities(set: &TranslatedSet, psa: f64) -> Result<Vec<f64>> {
    if !(psa >= 0.0) {
        return Err(Error::arg(format!("intensity must be >= 0, got {psa}")));
    }
    let p = set.exceedance(psa);
    for k in 1..p.len() {
        if p[k] > p[k - 1] {
            return Err(Error::Validity(format!(
                "fragility curves cross at psa {psa}: P(>= `{}`) = {} exceeds P(>= `{}`) = {}",
                set.names[k],
                p[k],
                set.names[k - 1],
                p[k - 1]
            )));
        }
    }
    let mut out = Vec::with_capacity(p.len() + 1);
    out.push(1.0 - p[0]);
    for k in 0..p.len() {
        out.push(p[k] - p.get(k + 1).copied().unwrap_or(0.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamageRealization {
    pub realization: usize,
    /// Index of the ground-motion field realization used.
    pub field: usize,
    /// State index per facility, 0 = none.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageSample {
    pub realizations: Vec<DamageRealization>,
    /// Empirical state frequencies, `facility × (K + 1)`.
    pub frequencies: Vec<Vec<f64>>,
    /// State probabilities averaged over the fields, `facility × (K + 1)`.
    pub probabilities: Vec<Vec<f64>>,
    /// Mean number of facilities per state over realizations.
    pub expected_counts: Vec<f64>,
}

/// Draws one damage state per facility per realization. `fields[f][i]` is
/// the PSA (g) at facility `i` in field realization `f`; each field is used
/// `draws_per_field` times. Realization `r` uses its own random stream.
pub fn sample_damage(
    fields: &[Vec<f64>],
    set: &FragilitySet,
    ratios: &[f64],
    draws_per_field: usize,
    seed: u64,
) -> Result<DamageSample> {
    if draws_per_field == 0 {
        return Err(Error::arg("draws_per_field must be >= 1"));
    }
    let n_fac = ratios.len();
    if let Some((f, _)) = fields.iter().enumerate().find(|(_, v)| v.len() != n_fac) {
        return Err(Error::arg(format!("field {f} does not have one value per facility")));
    }
    let translated: Vec<TranslatedSet> = ratios.iter().map(|&r| translate(set, r)).collect::<Result<_>>()?;
    let k1 = set.len() + 1;
    let probs: Vec<Vec<Vec<f64>>> = fields
        .iter()
        .map(|row| {
            row.iter()
                .zip(&translated)
                .map(|(&psa, t)| state_probabilities(t, psa))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n_real = fields.len() * draws_per_field;
    let realizations: Vec<DamageRealization> = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let field = r / draws_per_field;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let states = probs[field]
                .iter()
                .map(|p| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (k, pk) in p.iter().enumerate() {
                        acc += pk;
                        if u < acc {
                            return k;
                        }
                    }
                    // u landed in the rounding gap above the cumulative sum.
                    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
                })
                .collect();
            DamageRealization {
                realization: r,
                field,
                states,
            }
        })
        .collect();
    let mut frequencies = vec![vec![0.0; k1]; n_fac];
    let mut expected_counts = vec![0.0; k1];
    for d in &realizations {
        for (i, &s) in d.states.iter().enumerate() {
            frequencies[i][s] += 1.0;
            expected_counts[s] += 1.0;
        }
    }
    let denom = n_real.max(1) as f64;
    frequencies.iter_mut().flatten().for_each(|v| *v /= denom);
    expected_counts.iter_mut().for_each(|v| *v /= denom);
    let mut probabilities = vec![vec![0.0; k1]; n_fac];
    for row in &probs {
        for (i, p) in row.iter().enumerate() {
            for k in 0..k1 {
                probabilities[i][k] += p[k] / fields.len().max(1) as f64;
            }
        }
    }
    Ok(DamageSample {
        realizations,
        frequencies,
        probabilities,
        expected_counts,
    })
}

/// One facility of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub facility_id: String,
    pub x_km: f64,
    pub y_km: f64,
    /// Design-spectrum ratio of PSA at the target period to PGA.
    pub ratio: f64,
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads `state,median_g,beta` rows in increasing severity.
pub fn read_fragility(path: &Path) -> Result<FragilitySet> {
    read_fragility_from(open(path)?, &path.display().to_string())
}

pub fn read_fragility_from(r: impl Read, name: &str) -> Result<FragilitySet> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let mut states = Vec::new();
    for row in rd.deserialize::<(String, f64, f64)>() {
        let (state, median_g, beta) = row?;
        states.push(DamageState {
            name: state,
            median_g,
            beta,
        });
    }
    FragilitySet::new(states).map_err(|e| Error::Argument(format!("{name}: {e}")))
}

/// Reads `facility_id,x_km,y_km,ratio` rows.
pub fn read_facilities(path: &Path) -> Result<Vec<Facility>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for row in rd.deserialize::<Facility>() {
        let f = row?;
        if !(f.ratio > 0.0 && f.x_km.is_finite() && f.y_km.is_finite()) {
            return Err(Error::arg(format!(
                "{}: facility `{}` needs finite coordinates and a positive ratio",
                path.display(),
                f.facility_id
            )));
        }
        out.push(f);
    }
    if out.is_empty() {
        return Err(Error::arg(format!("{}: no facilities", path.display())));
    }
    Ok(out)
}
