mod common;


use common::scenario::*;
use common::load;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use solaudit_core::finding::Finding;
use solaudit_core::triage::{self, boost_confidence, merge, MergeError};
use solaudit_core::types::{Pipeline, Severity};

#[test]
fn boost_matches_closed_form_on_the_grid() {
    boost_grid_exact();
    assert!((boost_confidence(0.5, 1).unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(boost_confidence(0.7, 1).unwrap(), 0.95);
    assert_eq!(boost_confidence(0.95, 0).unwrap(), 0.95);
}

#[test]
fn boost_rejects_out_of_range_confidence() {
    for c in [0.0, 0.049, 0.951, 1.0, f64::NAN] {
        assert!(matches!(boost_confidence(c, 0), Err(MergeError::ConfidenceRange { .. })), "{c}");
    }
}

proptest! {
    #[test]
    fn boost_is_monotone_and_bounded(a in 0.05f64..=0.95, b in 0.05f64..=0.95, chi in 0u8..=1) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (x, y) = (boost_confidence(lo, chi).unwrap(), boost_confidence(hi, chi).unwrap());
        prop_assert!(x <= y);
        prop_assert!((0.05..=0.95).contains(&x));
        prop_assert!(boost_confidence(lo, 1).unwrap() >= boost_confidence(lo, 0).unwrap());
    }
}

#[test]
fn cross_indicator_matches_every_labeling() {
    chi_matches_every_labeling();
}

#[test]
fn id_collision_is_an_error() {
    let mut a = Finding::new(Pipeline::D, "x", Severity::Low, vec![]);
    a.id = "D-001".into();
    let b = a.clone();
    assert_eq!(triage::tag_and_union(vec![a], vec![b]).unwrap_err(), MergeError::IdCollision("D-001".into()));
}

#[test]
fn partition_laws_hold_on_random_sets() {
    partition_laws(1000);
}

#[test]
fn merge_is_deterministic_under_input_order() {
    let (_, m) = load("vault_reentrancy");
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..100 {
        let (mut fd, mut fi) = random_set(&mut rng, &m, 6);
        let a = merge(fd.clone(), fi.clone(), &m).unwrap();
        fd.reverse();
        fi.reverse();
        let b = merge(fd, fi, &m).unwrap();
        assert_eq!(a, b);
    }
}
