mod common;

use common::{dense_theta, gauss_logdet, gauss_solve, mat_rows, ngmm1, random_points};
use ngmm::kernels::PredictionPoint;
use ngmm::trainer::{
    fit_points, loo_cv_objective, loo_cv_value_and_grad, loo_predictions, marginal_loglik, GradientMode,
    TrainConfig, N_PARAMS,
};
use ngmm::{Error, HyperParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Held-out predictive of each point by explicit conditioning on the rest.
fn brute_force(points: &[PredictionPoint], y: &[f64], h: &HyperParams) -> (Vec<f64>, Vec<f64>, f64) {
    let c = &h.variance_components;
    let a = mat_rows(&dense_theta(points, &h.kernel, c.tau_dot2, c.phi_dot2));
    let n = y.len();
    let (mut means, mut vars, mut total) = (vec![], vec![], 0.0);
    for i in 0..n {
        let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sub: Vec<Vec<f64>> = rest.iter().map(|&r| rest.iter().map(|&s| a[r][s]).collect()).collect();
        let k: Vec<f64> = rest.iter().map(|&r| a[i][r]).collect();
        let yr: Vec<f64> = rest.iter().map(|&r| y[r]).collect();
        let w = gauss_solve(&sub, &k);
        let m: f64 = w.iter().zip(&yr).map(|(a, b)| a * b).sum();
        let v = a[i][i] - w.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
        total += -0.5 * v.ln() - (y[i] - m).powi(2) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        means.push(m);
        vars.push(v);
    }
    (means, vars, total)
}

fn instance(n: usize, seed: u64) -> (Vec<PredictionPoint>, Vec<f64>, HyperParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = random_points(n, 3, 25.0, seed);
    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut h = ngmm1();
    h.kernel.site_len *= 0.5 + rng.random::<f64>();
    h.kernel.path_var *= 0.5 + rng.random::<f64>();
    h.variance_components.phi_dot2 *= 0.5 + rng.random::<f64>();
    (pts, y, h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn loo_identities_match_explicit_refits() {
    for seed in 0..40 {
        let n = 2 + (seed as usize % 7);
        let (pts, y, h) = instance(n, seed);
        let (bm, bv, bt) = brute_force(&pts, &y, &h);
        let (m, v) = loo_predictions(&pts, &y, &h).unwrap();
        for i in 0..n {
            assert!(rel(m[i], bm[i]) < 1e-9 || (m[i] - bm[i]).abs() < 1e-12, "mean {seed}/{i}");
            assert!(rel(v[i], bv[i]) < 1e-9, "var {seed}/{i}");
        }
        let obj = loo_cv_objective(&pts, &y, &h).unwrap();
        assert!(rel(obj, bt) < 1e-9, "{obj} vs {bt}");
    }
}

#[test]
fn duplicated_point_sharpens_its_held_out_density() {
    let h = {
        let mut h = ngmm1();
        h.variance_components.phi_dot2 = 1e-6;
        h
    };
    let pts = random_points(4, 2, 20.0, 3);
    let y = vec![0.2, -0.1, 0.3, 0.05];
    let base = loo_cv_objective(&pts, &y, &h).unwrap();
    let (mut p2, mut y2) = (pts.clone(), y.clone());
    p2.push(pts[0]);
    y2.push(y[0]);
    let (m, v) = loo_predictions(&p2, &y2, &h).unwrap();
    let (_, v0) = loo_predictions(&pts, &y, &h).unwrap();
    assert!(v[0] < v0[0] && (m[0] - y[0]).abs() < 1e-3);
    assert!(loo_cv_objective(&p2, &y2, &h).unwrap() > base);
}

#[test]
fn gradient_cosine_on_random_instances() {
    for seed in 100..120 {
        let (pts, y, h) = instance(12, seed);
        let (_, a) = loo_cv_value_and_grad(&pts, &y, &h, GradientMode::Analytic).unwrap();
        let (_, f) = loo_cv_value_and_grad(&pts, &y, &h, GradientMode::FiniteDifference).unwrap();
        let dot: f64 = (0..N_PARAMS).map(|k| a[k] * f[k]).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nf) > 0.999, "seed {seed}: {a:?} vs {f:?}");
        for k in 0..N_PARAMS {
            assert!((a[k] - f[k]).abs() <= 1e-3 * f[k].abs().max(1e-4), "seed {seed} param {k}");
        }
    }
}

#[test]
fn marginal_likelihood_reference() {
    let (pts, y, h) = instance(8, 7);
    let c = &h.variance_components;
    let a = mat_rows(&dense_theta(&pts, &h.kernel, c.tau_dot2, c.phi_dot2));
    let x = gauss_solve(&a, &y);
    let quad: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let want = -0.5 * (quad + gauss_logdet(&a) + 8.0 * (2.0 * std::f64::consts::PI).ln());
    assert!(rel(marginal_loglik(&pts, &y, &h).unwrap(), want) < 1e-10);
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 20, epochs: 3, seed, ..Default::default() }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let (pts, y, h) = instance(50, 9);
    let cfg = TrainConfig { learning_rate: 0.0, ..small_config(1) };
    let (out, trace) = fit_points(&pts, &y, &cfg, &h).unwrap();
    assert_eq!(out, h);
    assert_eq!(trace.len(), 3);
}

#[test]
fn same_seed_same_trace() {
    let (pts, y, h) = instance(50, 10);
    let (a, ta) = fit_points(&pts, &y, &small_config(4), &h).unwrap();
    let (b, tb) = fit_points(&pts, &y, &small_config(4), &h).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (_, tc) = fit_points(&pts, &y, &small_config(5), &h).unwrap();
    assert_ne!(ta.records[0].objective, tc.records[0].objective);
    let cfg = small_config(4);
    for r in &ta.records {
        let v = [r.params.kernel.site_len, r.params.kernel.site_var];
        assert!(v[0] >= cfg.bounds.lower[0] && v[0] <= cfg.bounds.upper[0]);
        assert!(v[1] >= cfg.bounds.lower[1] && v[1] <= cfg.bounds.upper[1]);
    }
}

#[test]
fn non_finite_objective_aborts_with_snapshot() {
    let (pts, mut y, h) = instance(30, 11);
    y[4] = f64::NAN;
    match fit_points(&pts, &y, &small_config(2), &h) {
        Err(Error::NonFinite { epoch, last_valid, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(*last_valid, h);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rejects_tiny_batches_and_out_of_bounds_init() {
    let (pts, y, mut h) = instance(10, 12);
    assert!(fit_points(&pts, &y, &TrainConfig { batch_size: 1, ..Default::default() }, &h).is_err());
    h.kernel.site_len = 1e4;
    assert!(matches!(fit_points(&pts, &y, &small_config(0), &h), Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_invariant_to_point_order(seed in 0u64..500, shift in 1usize..7) {
        let (pts, y, h) = instance(8, seed);
        let a = loo_cv_objective(&pts, &y, &h).unwrap();
        let idx: Vec<usize> = (0..8).map(|i| (i + shift) % 8).rev().collect();
        let p2: Vec<_> = idx.iter().map(|&i| pts[i]).collect();
        let y2: Vec<_> = idx.iter().map(|&i| y[i]).collect();
        let b = loo_cv_objective(&p2, &y2, &h).unwrap();
        prop_assert!(rel(a, b) < 1e-10);
    }
}
