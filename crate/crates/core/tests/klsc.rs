mod common;

use common::*;
use faer::Mat;
use ngmm::kernels::{CovarianceKernel, TrainCovariance};
use ngmm::klsc::*;
use ngmm::linalg::DenseCholesky;
use proptest::prelude::*;

fn factor_for(n: usize, rho: f64, aggregated: bool, seed: u64) -> (Vec<ngmm::PredictionPoint>, SparseFactor) {
    let p = ngmm1();
    let pts = random_points(n, 8, 60.0, seed);
    let c = &p.variance_components;
    let f = factor_training_covariance(
        &pts,
        &p.kernel,
        c.tau_dot2,
        c.phi_dot2,
        FactorOptions { rho, aggregated, exact_limit: EXACT_LIMIT },
    )
    .unwrap();
    (pts, f)
}

#[test]
fn identity_covariance_gives_identity_factor() {
    let d = |i: usize, j: usize| (i as f64 - j as f64).abs();
    let o = reverse_maximin(6, d, EXACT_LIMIT).unwrap();
    let pat = build_pattern(&o, d, 3.0).unwrap();
    let f = factorize(|i, j| if i == j { 1.0 } else { 0.0 }, &o, &pat, true).unwrap();
    let l = f.dense_lower();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(l[(i, j)], if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn two_by_two_closed_form() {
    let d = |i: usize, j: usize| (i as f64 - j as f64).abs();
    let o = reverse_maximin(2, d, EXACT_LIMIT).unwrap();
    let pat = build_pattern(&o, d, f64::INFINITY).unwrap();
    let f = factorize(|i, j| if i == j { 1.0 } else { 0.5 }, &o, &pat, false).unwrap();
    let p = f.dense_precision();
    // Inverse of [[1, .5], [.5, 1]] is (4/3)[[1, -.5], [-.5, 1]].
    let inv = [[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((p[(i, j)] - inv[i][j]).abs() < 1e-15);
        }
    }
}

#[test]
fn full_pattern_inverts_theta() {
    let (pts, f) = factor_for(120, f64::INFINITY, true, 3);
    let p = ngmm1();
    let theta = dense_theta(&pts, &p.kernel, p.variance_components.tau_dot2, p.variance_components.phi_dot2);
    let inv = DenseCholesky::new(&theta).unwrap().inverse();
    let diff = &f.dense_precision() - &inv;
    assert!(frob(&diff) / frob(&inv) < 1e-8);
    assert_eq!(f.group_count(), 1);
}

#[test]
fn kl_shrinks_with_rho() {
    let p = ngmm1();
    let pts = random_points(50, 5, 40.0, 5);
    let theta = dense_theta(&pts, &p.kernel, 0.0, p.variance_components.phi_dot2);
    let kl = |rho| {
        let f = factor_training_covariance(&pts, &p.kernel, 0.0, p.variance_components.phi_dot2, FactorOptions { rho, ..Default::default() }).unwrap();
        kl_divergence(&f, &theta).unwrap()
    };
    let (k15, k3) = (kl(1.5), kl(3.0));
    assert!(k3 < k15, "{k3} vs {k15}");
}

#[test]
fn pattern_matches_brute_force_on_grid() {
    let pts: Vec<(f64, f64)> = (0..25).map(|i| ((i % 5) as f64, (i / 5) as f64)).collect();
    let d = |i: usize, j: usize| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
    let o = reverse_maximin(25, d, EXACT_LIMIT).unwrap();
    let pat = build_pattern(&o, d, 2.0).unwrap();
    // Oracle: for each selection step, previously selected points within 2 l.
    let sel = o.selection();
    for (k, &pk) in sel.iter().enumerate() {
        let l = o.distances()[k];
        let expect = 1 + sel[..k].iter().filter(|&&q| d(pk, q) < 2.0 * l).count();
        assert_eq!(pat.column(25 - 1 - k).len(), expect);
    }
}

#[test]
fn aggregated_equals_per_column_and_workers() {
    let (pts, agg) = factor_for(100, 3.0, true, 11);
    let (_, single) = factor_for(100, 3.0, false, 11);
    assert!(agg.group_count() < 100);
    for (a, b) in agg.values().iter().zip(single.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
    let run = |w| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(w).build().unwrap();
        pool.install(|| factor_for(100, 3.0, true, 11).1.values().to_vec())
    };
    let v1 = run(1);
    assert_eq!(v1, run(2));
    assert_eq!(v1, run(8));
    let _ = pts;
}

#[test]
fn disjoint_patterns_are_singletons() {
    let d = |i: usize, j: usize| (i as f64 - j as f64).abs() * 1e3;
    let o = reverse_maximin(5, d, EXACT_LIMIT).unwrap();
    let pat = build_pattern(&o, d, 1.0).unwrap();
    assert!(aggregate(&pat).iter().all(|g| g.members.len() == 1));
}

#[test]
fn column_recomputation_in_isolation() {
    let (pts, f) = factor_for(80, 2.0, true, 4);
    let p = ngmm1();
    let theta = TrainCovariance::new(&pts, &p.kernel, p.variance_components.tau_dot2, p.variance_components.phi_dot2);
    // Recompute column 17 alone from a one-column pattern with identical support.
    let col = 17;
    let support = f.pattern().column(col).to_vec();
    let sub: Vec<usize> = support.iter().map(|&r| f.ordering().point_at(r)).collect();
    let m = sub.len();
    let a = Mat::from_fn(m, m, |i, j| theta.entry(sub[i], sub[j]));
    let x = DenseCholesky::new(&a).unwrap().solve_vec(&{
        let mut e = vec![0.0; m];
        e[0] = 1.0;
        e
    });
    let scale = x[0].sqrt();
    for (v, xi) in f.column_values(col).iter().zip(&x) {
        assert!((v - xi / scale).abs() < 1e-10);
    }
}

#[test]
fn posterior_matches_dense_at_saturation() {
    let p = ngmm1();
    let c = p.variance_components;
    let obs = random_points(200, 6, 50.0, 21);
    let pred = random_points(40, 6, 50.0, 22);
    let y: Vec<f64> = (0..200).map(|i| ((i * 37 % 17) as f64 - 8.0) / 20.0).collect();
    let theta = dense_theta(&obs, &p.kernel, c.tau_dot2, c.phi_dot2);
    let inv = DenseCholesky::new(&theta).unwrap();
    let alpha = inv.solve_vec(&y);
    let cross = ngmm::kernels::assemble_cross_cov(&pred, &obs, &p.kernel);
    let prior = vec![p.kernel.variance(); 40];
    let f = factor_training_covariance(&obs, &p.kernel, c.tau_dot2, c.phi_dot2, FactorOptions { rho: f64::INFINITY, ..Default::default() }).unwrap();
    let post = solve_posterior(&f, &y, &cross, &prior, 0.01).unwrap();
    for i in 0..40 {
        let k = cross.row(i);
        let mean: f64 = k.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let s = inv.solve_vec(&k);
        let var = prior[i] - k.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() + 0.01;
        assert!((post.mean[i] - mean).abs() < 1e-8);
        assert!((post.variance[i] - var).abs() < 1e-8);
    }
}

#[test]
fn low_rank_correction_matches_dense_inverse() {
    let obs = random_points(90, 5, 40.0, 31);
    let n = obs.len();
    let local = |i: usize, j: usize| {
        let r = obs[i].path_distance(&obs[j]) / 8.0;
        0.07 * ngmm::MaternNu::ThreeHalves.correlation(r) + if i == j { 0.05 } else { 0.0 }
    };
    // Two grouped terms: 5 scenarios (diagonal) and 3 arbitrary groups (dense).
    let scen: Vec<usize> = obs.iter().map(|p| p.scenario).collect();
    let grp: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let cg = Mat::from_fn(3, 3, |a, b| if a == b { 0.2 } else { 0.05 });
    let terms = vec![GroupTerm::diagonal(scen.clone(), 5, 0.036), GroupTerm::dense(grp.clone(), &cg).unwrap()];
    let full = Mat::from_fn(n, n, |i, j| {
        local(i, j) + if scen[i] == scen[j] { 0.036 } else { 0.0 } + cg[(grp[i], grp[j])]
    });
    let inv = DenseCholesky::new(&full).unwrap();
    let d = |i: usize, j: usize| obs[i].path_distance(&obs[j]);
    let o = reverse_maximin(n, d, EXACT_LIMIT).unwrap();
    let pat = build_pattern(&o, d, f64::INFINITY).unwrap();
    let f = factorize(local, &o, &pat, true).unwrap();
    let lr = LowRankCorrected::new(f, terms).unwrap();
    assert_eq!(lr.rank(), 8);
    let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
    let got = lr.precision_apply(&v).unwrap();
    let want = inv.solve_vec(&v);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
    }
    let q: f64 = v.iter().zip(&want).map(|(a, b)| a * b).sum();
    assert!((lr.quad_form(&v).unwrap() - q).abs() < 1e-8 * q.abs());
}

#[test]
fn zero_observations_give_prior() {
    let (pts, f) = factor_for(30, 2.0, true, 8);
    let p = ngmm1();
    let cross = ngmm::kernels::assemble_cross_cov(&pts[..3], &pts, &p.kernel);
    let post = solve_posterior(&f, &vec![0.0; 30], &cross, &[0.171; 3], 0.1).unwrap();
    assert!(post.mean.iter().all(|&m| m == 0.0));
    assert!(post.variance.iter().all(|&v| v <= 0.271 + 1e-12));
    assert!(solve_posterior(&f, &[0.0; 5], &cross, &[0.171; 3], 0.1).is_err());
}

#[test]
fn interpolates_at_data_without_noise() {
    let p = ngmm1();
    let pts = random_points(20, 3, 30.0, 2);
    let f = factor_training_covariance(&pts, &p.kernel, 0.0, 0.0, FactorOptions { rho: f64::INFINITY, ..Default::default() }).unwrap();
    let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    let cross = ngmm::kernels::assemble_cross_cov(&pts[4..5], &pts, &p.kernel);
    let post = solve_posterior(&f, &y, &cross, &[0.171], 0.0).unwrap();
    assert!((post.mean[0] - y[4]).abs() < 1e-4);
}

#[test]
fn file_round_trip_and_staleness() {
    let (pts, mut f) = factor_for(60, 2.0, true, 9);
    let p = ngmm1();
    let fp = fingerprint(&pts, &p, 2.0);
    f.set_fingerprint(fp);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.klsc");
    write_factor(&f, &path).unwrap();
    let g = read_factor(&path).unwrap();
    assert_eq!(g.values(), f.values());
    assert_eq!(g.ordering(), f.ordering());
    g.check_fingerprint(&fp).unwrap();
    let mut q = p;
    q.kernel.site_len *= 1.01;
    assert!(matches!(g.check_fingerprint(&fingerprint(&pts, &q, 2.0)), Err(ngmm::Error::Staleness(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ordering_distances_are_exact(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let d = |i: usize, j: usize| (xs[i] - xs[j]).abs();
        let o = reverse_maximin(xs.len(), d, EXACT_LIMIT).unwrap();
        let sel = o.selection();
        prop_assert!(o.distances()[0].is_infinite());
        for k in 1..sel.len() {
            let m = sel[..k].iter().map(|&q| d(sel[k], q)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(o.distances()[k], m);
        }
    }

    #[test]
    fn pattern_columns_respect_radius(seed in 0u64..500, rho in 1.0f64..5.0) {
        let pts = random_points(30, 4, 20.0, seed);
        let k = ngmm1().kernel;
        let d = |i: usize, j: usize| k.distance(&pts[i], &pts[j]);
        let o = reverse_maximin(30, d, EXACT_LIMIT).unwrap();
        let pat = build_pattern(&o, d, rho).unwrap();
        for i in 0..30 {
            let col = pat.column(i);
            prop_assert_eq!(col[0], i);
            for &j in &col[1..] {
                prop_assert!(j > i);
                prop_assert!(d(o.point_at(i), o.point_at(j)) < rho * o.length_at(i));
            }
        }
    }

    #[test]
    fn diagonal_is_positive(seed in 0u64..500) {
        let (_, f) = factor_for(25, 2.0, true, seed);
        for i in 0..25 {
            prop_assert!(f.column_values(i)[0] > 0.0);
        }
    }
}
