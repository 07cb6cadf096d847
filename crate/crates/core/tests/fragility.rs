use ngmm::fragility::{sample_damage, state_probabilities, translate, DamageState, FragilitySet};
use ngmm::Error;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

fn state(name: &str, median_g: f64, beta: f64) -> DamageState {
    DamageState { name: name.into(), median_g, beta }
}

fn two_state() -> FragilitySet {
    FragilitySet::new(vec![state("slight", 0.2, 0.5), state("complete", 0.4, 0.5)]).unwrap()
}

#[test]
fn median_gives_one_half() {
    let set = FragilitySet::example();
    let t = translate(&set, 1.7).unwrap();
    for (k, s) in set.states().iter().enumerate() {
        let p = t.exceedance(s.median_g * 1.7);
        assert!((p[k] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn unit_ratio_is_identity() {
    let set = FragilitySet::example();
    let t = translate(&set, 1.0).unwrap();
    for (k, s) in set.states().iter().enumerate() {
        assert_eq!(t.medians[k], s.median_g);
        assert_eq!(t.betas[k], s.beta);
    }
    assert!(matches!(translate(&set, 0.0), Err(Error::Argument(_))));
    assert!(translate(&set, -1.0).is_err());
}

#[test]
fn small_dispersion_is_a_step() {
    let set = FragilitySet::new(vec![state("a", 0.3, 1e-6)]).unwrap();
    let t = translate(&set, 1.0).unwrap();
    assert_eq!(t.exceedance(0.299), vec![0.0]);
    assert_eq!(t.exceedance(0.301), vec![1.0]);
}

#[test]
fn two_state_hand_instance() {
    let t = translate(&two_state(), 1.0).unwrap();
    let p = state_probabilities(&t, 0.3).unwrap();
    let p1 = phi((0.3f64.ln() - 0.2f64.ln()) / 0.5);
    let p2 = phi((0.3f64.ln() - 0.4f64.ln()) / 0.5);
    let want = [1.0 - p1, p1 - p2, p2];
    // The reference CDF is accurate to roughly 1e-11.
    for k in 0..3 {
        assert!((p[k] - want[k]).abs() < 1e-10, "{k}: {} vs {}", p[k], want[k]);
    }
}

#[test]
fn limits() {
    let t = translate(&FragilitySet::example(), 1.2).unwrap();
    assert_eq!(state_probabilities(&t, 0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let hi = state_probabilities(&t, 1e6).unwrap();
    assert!(hi[..4].iter().all(|p| p.abs() < 1e-12) && (hi[4] - 1.0).abs() < 1e-12);
    assert!(state_probabilities(&t, -0.1).is_err());
}

#[test]
fn crossing_curves_are_named() {
    // Increasing medians but very different dispersions cross at high psa.
    let set = FragilitySet::new(vec![state("slight", 0.2, 0.2), state("complete", 0.25, 1.5)]).unwrap();
    let t = translate(&set, 1.0).unwrap();
    match state_probabilities(&t, 0.05) {
        Err(Error::Validity(msg)) => assert!(msg.contains("slight") && msg.contains("complete")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn set_validation() {
    assert!(FragilitySet::new(vec![]).is_err());
    assert!(FragilitySet::new(vec![state("a", 0.3, 0.5), state("b", 0.2, 0.5)]).is_err());
    assert!(FragilitySet::new(vec![state("a", 0.3, 0.0)]).is_err());
}

#[test]
fn frequencies_within_binomial_bands() {
    let set = FragilitySet::example();
    let ratios = [0.8, 1.0, 1.6];
    let field = vec![vec![0.12, 0.3, 0.55]];
    let n = 100_000;
    let out = sample_damage(&field, &set, &ratios, n, 42).unwrap();
    assert_eq!(out.realizations.len(), n);
    for i in 0..3 {
        let p = state_probabilities(&translate(&set, ratios[i]).unwrap(), field[0][i]).unwrap();
        for k in 0..p.len() {
            let sd = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
            assert!((out.frequencies[i][k] - p[k]).abs() <= 3.0 * sd + 1e-12, "facility {i} state {k}");
            assert!((out.probabilities[i][k] - p[k]).abs() < 1e-15);
        }
    }
    let total: f64 = out.expected_counts.iter().sum();
    assert!((total - 3.0).abs() < 1e-9);
}

#[test]
fn zero_field_leaves_everything_intact() {
    let out = sample_damage(&vec![vec![0.0; 4]; 10], &FragilitySet::example(), &[1.0; 4], 3, 1).unwrap();
    assert!(out.realizations.iter().all(|r| r.states.iter().all(|&s| s == 0)));
    assert_eq!(out.expected_counts[0], 4.0);
}

#[test]
fn damage_sampling_is_seeded() {
    let fields = vec![vec![0.2, 0.4], vec![0.6, 0.1]];
    let set = FragilitySet::example();
    let a = sample_damage(&fields, &set, &[1.0, 1.3], 50, 7).unwrap();
    assert_eq!(a, sample_damage(&fields, &set, &[1.0, 1.3], 50, 7).unwrap());
    assert_ne!(a.realizations, sample_damage(&fields, &set, &[1.0, 1.3], 50, 8).unwrap().realizations);
    assert_eq!(a.realizations[51].field, 1);
    assert!(sample_damage(&fields, &set, &[1.0], 1, 7).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vectors_normalize(psa in 1e-4f64..10.0, ratio in 0.2f64..5.0) {
        let t = translate(&FragilitySet::example(), ratio).unwrap();
        let p = state_probabilities(&t, psa).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn exceedance_grows_with_intensity(a in 1e-4f64..5.0, b in 1e-4f64..5.0) {
        let t = translate(&FragilitySet::example(), 1.1).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let (pl, ph) = (t.exceedance(lo), t.exceedance(hi));
        prop_assert!(pl.iter().zip(&ph).all(|(x, y)| x <= y));
    }

    #[test]
    fn common_scaling_is_invariant(psa in 1e-3f64..5.0, c in 0.1f64..10.0) {
        let set = FragilitySet::example();
        let scaled = FragilitySet::new(
            set.states().iter().map(|s| state(&s.name, s.median_g * c, s.beta)).collect(),
        ).unwrap();
        let p = state_probabilities(&translate(&set, 1.0).unwrap(), psa).unwrap();
        let q = state_probabilities(&translate(&scaled, 1.0).unwrap(), psa * c).unwrap();
        for k in 0..p.len() {
            prop_assert!((p[k] - q[k]).abs() < 1e-12);
        }
    }
}
