mod common;

use std::time::Instant;

use common::scenario::check_ccim_fixture;
use common::{f, load, FIXTURES};
use solaudit_core::types::VarId;

#[test]
fn every_fixture_matches_the_brute_force_oracle() {
    let t = Instant::now();
    for name in FIXTURES {
        check_ccim_fixture(name);
    }
    assert!(t.elapsed().as_secs_f64() < 5.0, "oracle corpus took {:?}", t.elapsed());
}

#[test]
fn internal_cycle_members_share_one_footprint() {
    let (_, m) = load("internal_cycles");
    let ping = m.footprints.get(&f("Cycle", "_ping")).unwrap();
    for g in ["_pong", "_pang"] {
        assert_eq!(m.footprints.get(&f("Cycle", g)), Some(ping));
    }
}

#[test]
fn inherited_helpers_feed_derived_footprints() {
    let (_, m) = load("inheritance_chain");
    assert!(m.resolution.inheritance.iter().any(|(b, d)| b == "Pausable" && d == "Token"));
    let transfer = m.records.iter().find(|r| r.owner == "Token" && r.name == "transfer").unwrap();
    let fp = m.footprints.get(&transfer.fn_ref()).unwrap();
    assert!(fp.writes.len() >= transfer.writes.len());
    assert!(fp.reads.is_superset(&transfer.reads));
}

#[test]
fn bidirectional_calls_form_a_callback() {
    let (_, m) = load("bidirectional_hooks");
    assert!(m.trust.callbacks.contains(&("Hook".to_string(), "Pool".to_string())));
    assert!(m.graph.contract_edges.contains(&("Pool".to_string(), "Hook".to_string())));
    assert!(m.graph.contract_edges.contains(&("Hook".to_string(), "Pool".to_string())));
}

#[test]
fn admin_set_approval_recipients_are_rotation_risks() {
    let (_, m) = load("approval_router");
    assert!(m.deps.rot.contains(&VarId::new("Router", "spender")));
    assert!(m.trust.trustgap("Router", "Swapper"));
}

#[test]
fn interface_only_repo_has_empty_scope() {
    let (_, m) = load("interfaces_only");
    assert!(m.records.is_empty());
    assert!(m.graph.edges.is_empty() && m.deps.rot.is_empty());
}

#[test]
fn model_is_deterministic() {
    for name in FIXTURES {
        let (_, a) = load(name);
        let (_, b) = load(name);
        assert_eq!(a.to_canonical_json(), b.to_canonical_json(), "{name}");
    }
}
