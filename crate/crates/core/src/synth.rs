//! Synthetic catalogs with known systematic terms and variance components.
//!
//! Site and path fields are drawn densely from the kernel covariance, so the
//! generator does not share code paths with the sparse solver it is used to
//! test.

use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    write_catalog, CatalogPaths, ResidualCatalog, ResidualRecord, RuptureScenario, RuptureVariation, Site,
};
use crate::error::{Error, Result};
use crate::kernels::JITTER_REL;
use crate::linalg::DenseCholesky;
use crate::params::HyperParams;

/// Maximum number of jointly drawn latent values (sites plus pairs).
pub const LATENT_CAP: usize = 5000;

const STREAM_LAYOUT: u64 = 1;
const STREAM_SITE: u64 = 2;
const STREAM_PATH: u64 = 3;
const STREAM_SCENARIO: u64 = 4;
const STREAM_CELL: u64 = 5;
const STREAM_EVENT: u64 = 6;
const STREAM_RECORD: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_sites: usize,
    /// Sites are uniform on `[0, extent]²` km.
    pub extent_km: f64,
    pub n_scenarios: usize,
    /// Rupture points are uniform on `[−margin, extent + margin]²` km.
    pub source_margin_km: f64,
    /// Each scenario is recorded at its nearest sites only; `None` records
    /// every scenario at every site.
    pub sites_per_scenario: Option<usize>,
    pub variations_per_scenario: usize,
    pub magnitude_range: [f64; 2],
    pub rate_range: [f64; 2],
    pub params: HyperParams,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_sites: 40,
            extent_km: 60.0,
            n_scenarios: 20,
            source_margin_km: 10.0,
            sites_per_scenario: None,
            variations_per_scenario: 5,
            magnitude_range: [5.5, 7.5],
            rate_range: [1e-4, 1e-2],
            params: HyperParams::preset("ngmm1").expect("shipped preset"),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_scenarios == 0 || self.variations_per_scenario == 0 {
            return Err(Error::arg("site, scenario and variation counts must be >= 1"));
        }
        if self.sites_per_scenario == Some(0) {
            return Err(Error::arg("sites_per_scenario must be >= 1"));
        }
        if !(self.extent_km > 0.0 && self.extent_km.is_finite()) || !(self.source_margin_km >= 0.0) {
            return Err(Error::arg("extent must be positive and margin non-negative"));
        }
        let [m0, m1] = self.magnitude_range;
        let [r0, r1] = self.rate_range;
        if !(m0 <= m1) || !(0.0 <= r0 && r0 <= r1) {
            return Err(Error::arg("magnitude and rate ranges must be ordered, rates >= 0"));
        }
        let c = &self.params.variance_components;
        let k = &self.params.kernel;
        let vars = [k.site_var, k.path_var, c.tau_dot2, c.phi_dot2, c.tau_ddot2, c.phi_ddot2];
        if vars.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::arg("variances must be finite and non-negative"));
        }
        if !(k.site_len > 0.0 && k.path_len > 0.0) {
            return Err(Error::arg("length scales must be positive"));
        }
        let latent = self.n_sites + self.n_pairs();
        if latent > LATENT_CAP {
            return Err(Error::Size(format!(
                "{latent} latent values ({} sites + {} pairs) exceed the dense cap of {LATENT_CAP}; lower sites_per_scenario",
                self.n_sites,
                self.n_pairs()
            )));
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.n_scenarios * self.sites_per_scenario.unwrap_or(self.n_sites).min(self.n_sites)
    }
}

/// Every latent term of a generated catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub params: HyperParams,
    pub seed: u64,
    /// δS2S per site.
    pub site_terms: Vec<f64>,
    /// Observed (scenario, site) pairs, scenario-major.
    pub pairs: Vec<(usize, usize)>,
    /// δP2P per pair.
    pub path_terms: Vec<f64>,
    /// δḂ per scenario.
    pub scenario_terms: Vec<f64>,
    /// δẆ per pair.
    pub cell_terms: Vec<f64>,
    /// δB̈ per variation.
    pub event_terms: Vec<f64>,
    /// δẄ per record, aligned with the catalog records.
    pub record_terms: Vec<f64>,
}

impl SynthTruth {
    /// Latent scenario mean `δS2S + δP2P + δḂ + δẆ` of pair `p`.
    pub fn latent_mean(&self, p: usize) -> f64 {
        let (l, s) = self.pairs[p];
        self.site_terms[s] + self.path_terms[p] + self.scenario_terms[l] + self.cell_terms[p]
    }

    /// Noise-free systematic term `δS2S + δP2P` of pair `p`.
    pub fn systematic(&self, p: usize) -> f64 {
        self.site_terms[self.pairs[p].1] + self.path_terms[p]
    }

    pub fn pair_index(&self, scenario: usize, site: usize) -> Option<usize> {
        self.pairs.binary_search(&(scenario, site)).ok()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn normals(rng: &mut ChaCha8Rng, n: usize, var: f64) -> Vec<f64> {
    let s = var.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        })
        .collect()
}

/// Zero-mean Gaussian draw with covariance `var · corr(i, j)`.
fn dense_field(n: usize, var: f64, corr: impl Fn(usize, usize) -> f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let z = normals(rng, n, 1.0);
    if var == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let cov = Mat::from_fn(n, n, |i, j| {
        let v = var * corr(i, j);
        if i == j {
            v + JITTER_REL * var
        } else {
            v
        }
    });
    Ok(DenseCholesky::new(&cov)?.correlate(&z))
}

/// Toy ergodic backbone: ln-median and total σ of PSA in g.
pub fn toy_backbone(magnitude: f64, distance_km: f64, total_sigma: f64) -> (f64, f64) {
    let r = (distance_km * distance_km + 36.0).sqrt();
    (-1.5 + 1.1 * (magnitude - 6.0) - 1.2 * r.ln() + 1.2 * 10f64.ln(), total_sigma.max(1e-6))
}

/// Generates a catalog and its latent truth.
pub fn generate(spec: &SynthSpec) -> Result<(ResidualCatalog, SynthTruth)> {
    spec.validate()?;
    let mut layout = stream(spec.seed, STREAM_LAYOUT);
    let e = spec.extent_km;
    let m = spec.source_margin_km;
    let sites: Vec<Site> = (0..spec.n_sites)
        .map(|i| Site {
            site_id: format!("site{i:05}"),
            x_km: layout.random::<f64>() * e,
            y_km: layout.random::<f64>() * e,
            vs30: Some(760.0),
        })
        .collect();
    let [m0, m1] = spec.magnitude_range;
    let [r0, r1] = spec.rate_range;
    let scenarios: Vec<RuptureScenario> = (0..spec.n_scenarios)
        .map(|i| {
            let x = layout.random::<f64>() * (e + 2.0 * m) - m;
            let y = layout.random::<f64>() * (e + 2.0 * m) - m;
            let mag = m0 + layout.random::<f64>() * (m1 - m0);
            let rate = r0 + layout.random::<f64>() * (r1 - r0);
            RuptureScenario {
                scenario_id: format!("scen{i:05}"),
                magnitude: mag,
                annual_rate: rate,
                closest_point_x_km: x,
                closest_point_y_km: y,
            }
        })
        .collect();

    let k_sites = spec.sites_per_scenario.unwrap_or(spec.n_sites).min(spec.n_sites);
    let mut pairs = Vec::with_capacity(spec.n_pairs());
    for (l, sc) in scenarios.iter().enumerate() {
        let mut near: Vec<(f64, usize)> = sites
            .iter()
            .enumerate()
            .map(|(s, st)| {
                let d = (st.x_km - sc.closest_point_x_km).hypot(st.y_km - sc.closest_point_y_km);
                (d, s)
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = near[..k_sites].iter().map(|x| x.1).collect();
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|s| (l, s)));
    }

    let p = &spec.params;
    let nu = p.kernel.nu;
    let site_terms = dense_field(
        sites.len(),
        p.kernel.site_var,
        |i, j| {
            let d = (sites[i].x_km - sites[j].x_km).hypot(sites[i].y_km - sites[j].y_km);
            nu.correlation(d / p.kernel.site_len)
        },
        &mut stream(spec.seed, STREAM_SITE),
    )?;
    let coord = |q: usize| {
        let (l, s) = pairs[q];
        [
            sites[s].x_km,
            sites[s].y_km,
            scenarios[l].closest_point_x_km,
            scenarios[l].closest_point_y_km,
        ]
    };
    let path_terms = dense_field(
        pairs.len(),
        p.kernel.path_var,
        |i, j| {
            let (a, b) = (coord(i), coord(j));
            let d = (0..4).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
            nu.correlation(d / p.kernel.path_len)
        },
        &mut stream(spec.seed, STREAM_PATH),
    )?;
    let c = &p.variance_components;
    let scenario_terms = normals(&mut stream(spec.seed, STREAM_SCENARIO), scenarios.len(), c.tau_dot2);
    let cell_terms = normals(&mut stream(spec.seed, STREAM_CELL), pairs.len(), c.phi_dot2);
    let n_var = spec.variations_per_scenario;
    let variations: Vec<RuptureVariation> = (0..scenarios.len() * n_var)
        .map(|v| RuptureVariation {
            variation_id: format!("scen{:05}_v{:03}", v / n_var, v % n_var),
            scenario: v / n_var,
        })
        .collect();
    let event_terms = normals(&mut stream(spec.seed, STREAM_EVENT), variations.len(), c.tau_ddot2);
    let mut record_rng = stream(spec.seed, STREAM_RECORD);
    let total_sigma = p.total_variance().sqrt();

    let mut records = Vec::with_capacity(pairs.len() * n_var);
    let mut record_terms = Vec::with_capacity(pairs.len() * n_var);
    let mut start = 0;
    for l in 0..scenarios.len() {
        let end = start + pairs[start..].iter().take_while(|q| q.0 == l).count();
        for v in l * n_var..(l + 1) * n_var {
            for q in start..end {
                let s = pairs[q].1;
                let w: f64 = StandardNormal.sample(&mut record_rng);
                let w = c.phi_ddot2.sqrt() * w;
                let y = site_terms[s] + path_terms[q] + scenario_terms[l] + cell_terms[q] + event_terms[v] + w;
                let sc = &scenarios[l];
                let d = (sites[s].x_km - sc.closest_point_x_km).hypot(sites[s].y_km - sc.closest_point_y_km);
                let (mu, sigma) = toy_backbone(sc.magnitude, d, total_sigma);
                records.push(ResidualRecord {
                    variation: v,
                    site: s,
                    y,
                    backbone_mu: mu,
                    backbone_sigma: sigma,
                });
                record_terms.push(w);
            }
        }
        start = end;
    }
    let catalog = ResidualCatalog::new(sites, scenarios, variations, records)?;
    let truth = SynthTruth {
        params: *p,
        seed: spec.seed,
        site_terms,
        pairs,
        path_terms,
        scenario_terms,
        cell_terms,
        event_terms,
        record_terms,
    };
    Ok((catalog, truth))
}

/// Writes the catalog CSVs into `dir` plus `truth.json`.
pub fn write_synth(catalog: &ResidualCatalog, truth: &SynthTruth, dir: &Path) -> Result<()> {
    write_catalog(catalog, &CatalogPaths::in_dir(dir))?;
    let path = dir.join("truth.json");
    let tmp = dir.join(".truth.json.tmp");
    let body = serde_json::to_vec_pretty(truth)?;
    std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<SynthTruth> {
    let body = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&body)?)
}
