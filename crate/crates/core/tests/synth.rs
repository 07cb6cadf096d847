use ngmm::domain::{collapse_to_means, ingest_catalog, CatalogPaths, IngestOptions};
use ngmm::synth::{generate, read_truth, write_synth, SynthSpec};
use ngmm::{Error, HyperParams};
use proptest::prelude::*;

fn small(seed: u64) -> SynthSpec {
    SynthSpec { n_sites: 15, n_scenarios: 6, variations_per_scenario: 4, seed, ..Default::default() }
}

#[test]
fn zero_variances_give_zero_residuals() {
    let mut spec = small(1);
    let k = &mut spec.params.kernel;
    k.site_var = 0.0;
    k.path_var = 0.0;
    let c = &mut spec.params.variance_components;
    c.tau_dot2 = 0.0;
    c.phi_dot2 = 0.0;
    c.tau_ddot2 = 0.0;
    c.phi_ddot2 = 0.0;
    let (cat, _) = generate(&spec).unwrap();
    assert!(!cat.is_empty());
    assert!(cat.records().iter().all(|r| r.y == 0.0));
}

#[test]
fn event_term_variance_within_chi_square_band() {
    let spec = SynthSpec {
        n_sites: 1,
        n_scenarios: 200,
        variations_per_scenario: 50,
        seed: 5,
        ..Default::default()
    };
    let (_, truth) = generate(&spec).unwrap();
    let tau2 = spec.params.variance_components.tau_ddot2;
    let n = truth.event_terms.len() as f64;
    // Σ x²/τ² ~ χ²(n): mean n, sd √(2n).
    let q: f64 = truth.event_terms.iter().map(|x| x * x / tau2).sum();
    assert!((q - n).abs() < 3.0 * (2.0 * n).sqrt(), "{q} vs {n}");
}

#[test]
fn site_field_variogram_matches_kernel() {
    let h = HyperParams::preset("ngmm1").unwrap();
    let bins = [(1.0, 3.0), (3.0, 6.0), (6.0, 12.0), (12.0, 24.0), (40.0, 60.0)];
    let mut acc = vec![(0.0, 0usize); bins.len()];
    let mut model = vec![(0.0, 0usize); bins.len()];
    for seed in 0..4 {
        let spec = SynthSpec {
            n_sites: 1000,
            extent_km: 150.0,
            n_scenarios: 1,
            sites_per_scenario: Some(1),
            variations_per_scenario: 1,
            seed,
            ..Default::default()
        };
        let (cat, truth) = generate(&spec).unwrap();
        let s = cat.sites();
        for i in 0..s.len() {
            for j in 0..i {
                let d = (s[i].x_km - s[j].x_km).hypot(s[i].y_km - s[j].y_km);
                if let Some(b) = bins.iter().position(|(lo, hi)| d >= *lo && d < *hi) {
                    acc[b].0 += 0.5 * (truth.site_terms[i] - truth.site_terms[j]).powi(2);
                    acc[b].1 += 1;
                    model[b].0 += h.kernel.site_var * (1.0 - h.kernel.nu.correlation(d / h.kernel.site_len));
                    model[b].1 += 1;
                }
            }
        }
    }
    for b in 0..bins.len() {
        let got = acc[b].0 / acc[b].1 as f64;
        let want = model[b].0 / model[b].1 as f64;
        assert!((got - want).abs() < 0.2 * want, "bin {:?}: {got} vs {want}", bins[b]);
    }
}

#[test]
fn collapse_recovers_latent_plus_event_means() {
    let spec = small(2);
    let (cat, truth) = generate(&spec).unwrap();
    let table = collapse_to_means(&cat).unwrap();
    assert_eq!(table.len(), truth.pairs.len());
    let n_var = spec.variations_per_scenario;
    for (p, &(l, s)) in truth.pairs.iter().enumerate() {
        let mut noise = 0.0;
        for (r, rec) in cat.records().iter().enumerate() {
            if rec.site == s && rec.variation / n_var == l {
                noise += truth.event_terms[rec.variation] + truth.record_terms[r];
            }
        }
        let want = truth.latent_mean(p) + noise / n_var as f64;
        let got = table.lookup(l, s).unwrap().y_bar;
        assert!((got - want).abs() < 1e-12, "pair {p}: {got} vs {want}");
    }
}

#[test]
fn nearest_sites_subset() {
    let spec = SynthSpec { n_sites: 30, n_scenarios: 10, sites_per_scenario: Some(5), ..small(3) };
    let (cat, truth) = generate(&spec).unwrap();
    assert_eq!(truth.pairs.len(), 50);
    for l in 0..10 {
        let sc = &cat.scenarios()[l];
        let d = |s: usize| (cat.sites()[s].x_km - sc.closest_point_x_km).hypot(cat.sites()[s].y_km - sc.closest_point_y_km);
        let chosen: Vec<usize> = truth.pairs.iter().filter(|p| p.0 == l).map(|p| p.1).collect();
        let worst = chosen.iter().map(|&s| d(s)).fold(0.0, f64::max);
        let others = (0..30).filter(|s| !chosen.contains(s)).map(d).fold(f64::INFINITY, f64::min);
        assert!(worst <= others);
    }
}

#[test]
fn oversized_latent_dimension_is_rejected() {
    let spec = SynthSpec { n_sites: 100, n_scenarios: 100, ..Default::default() };
    assert!(matches!(generate(&spec), Err(Error::Size(_))));
    let spec = SynthSpec { n_sites: 0, ..Default::default() };
    assert!(matches!(generate(&spec), Err(Error::Argument(_))));
}

#[test]
fn written_catalog_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (cat, truth) = generate(&small(4)).unwrap();
    write_synth(&cat, &truth, dir.path()).unwrap();
    let back = ingest_catalog(&CatalogPaths::in_dir(dir.path()), &IngestOptions::default()).unwrap();
    assert_eq!(back.len(), cat.len());
    for (a, b) in back.records().iter().zip(cat.records()) {
        assert_eq!(a.y, b.y);
    }
    assert_eq!(read_truth(&dir.path().join("truth.json")).unwrap(), truth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn seeded_determinism(seed in 0u64..1000) {
        let (a, ta) = generate(&small(seed)).unwrap();
        let (b, tb) = generate(&small(seed)).unwrap();
        prop_assert_eq!(a.records(), b.records());
        prop_assert_eq!(&ta, &tb);
        let (c, _) = generate(&small(seed + 1)).unwrap();
        prop_assert!(a.records() != c.records());
    }
}
