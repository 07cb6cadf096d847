#![allow(dead_code)]

use faer::Mat;
use ngmm::kernels::{KernelHyper, PredictionPoint, TrainCovariance};
use ngmm::domain::{ResidualCatalog, ResidualRecord, RuptureScenario, RuptureVariation, Site};
use ngmm::HyperParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ngmm1() -> HyperParams {
    HyperParams::preset("ngmm1").unwrap()
}

/// Random points: `n_scen` scenario sources and sites in a `extent`-km square.
pub fn random_points(n: usize, n_scen: usize, extent: f64, seed: u64) -> Vec<PredictionPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<[f64; 2]> = (0..n_scen)
        .map(|_| [rng.random::<f64>() * extent, rng.random::<f64>() * extent])
        .collect();
    (0..n)
        .map(|i| {
            let s = rng.random_range(0..n_scen);
            PredictionPoint {
                site_xy: [rng.random::<f64>() * extent, rng.random::<f64>() * extent],
                source_xy: sources[s],
                scenario: s,
                site: i,
            }
        })
        .collect()
}

pub fn dense_theta(points: &[PredictionPoint], k: &KernelHyper, tau: f64, phi: f64) -> Mat<f64> {
    let t = TrainCovariance::new(points, k, tau, phi);
    Mat::from_fn(points.len(), points.len(), |i, j| t.entry(i, j))
}

pub fn frob(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Solves `A x = b` densely by Gaussian elimination with partial pivoting,
/// independent of the library's Cholesky routines.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Log-determinant via LU with partial pivoting.
pub fn gauss_logdet(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut ld = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, p);
        ld += m[c][c].abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    ld
}

pub fn mat_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Every scenario observed at every site: `n_sites × n_scen` points.
pub fn collocated(n_sites: usize, n_scen: usize, extent: f64, seed: u64) -> Vec<PredictionPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<[f64; 2]> = (0..n_sites)
        .map(|_| [rng.random::<f64>() * extent, rng.random::<f64>() * extent])
        .collect();
    let sources: Vec<[f64; 2]> = (0..n_scen)
        .map(|_| [rng.random::<f64>() * extent, rng.random::<f64>() * extent])
        .collect();
    let mut pts = Vec::with_capacity(n_sites * n_scen);
    for (l, src) in sources.iter().enumerate() {
        for (s, xy) in sites.iter().enumerate() {
            pts.push(PredictionPoint { site_xy: *xy, source_xy: *src, scenario: l, site: s });
        }
    }
    pts
}

/// Catalog with `n_var` variations per scenario; `y(variation, site)` gives
/// each residual.
pub fn catalog(
    sites: &[[f64; 2]],
    sources: &[[f64; 2]],
    n_var: usize,
    y: impl Fn(usize, usize) -> f64,
) -> ResidualCatalog {
    let site_rows: Vec<Site> = sites
        .iter()
        .enumerate()
        .map(|(i, xy)| Site { site_id: format!("S{i}"), x_km: xy[0], y_km: xy[1], vs30: None })
        .collect();
    let scen_rows: Vec<RuptureScenario> = sources
        .iter()
        .enumerate()
        .map(|(i, xy)| RuptureScenario {
            scenario_id: format!("R{i}"),
            magnitude: 6.5,
            annual_rate: 1e-3,
            closest_point_x_km: xy[0],
            closest_point_y_km: xy[1],
        })
        .collect();
    let variations: Vec<RuptureVariation> = (0..sources.len() * n_var)
        .map(|v| RuptureVariation { variation_id: format!("V{v}"), scenario: v / n_var })
        .collect();
    let mut records = Vec::new();
    for v in 0..variations.len() {
        for s in 0..sites.len() {
            records.push(ResidualRecord { variation: v, site: s, y: y(v, s), backbone_mu: -2.0, backbone_sigma: 0.6 });
        }
    }
    ResidualCatalog::new(site_rows, scen_rows, variations, records).unwrap()
}
