mod common;

use common::scenario::*;
use common::{finding, quiet_mock, Harness};
use solaudit_core::dd::{phase_d_apply, phase_d_prefilter, Route};
use solaudit_core::reasoner::{stage, Reasoner};
use solaudit_core::types::{FnRef, Severity};

#[test]
fn fixture_carries_a_reentrancy_signal_on_claim() {
    let h = Harness::new("adversarial_vault");
    let sigs = h.signals.for_function(&FnRef::new("Bank", "claim"));
    assert!(sigs.iter().any(|s| s.rule() == "IRA-REENTRANCY"), "{sigs:?}");
}

#[test]
fn admin_trust_sets_low_without_reasoner_calls() {
    admin_trust_route(&Harness::new("adversarial_vault"));
}

#[test]
fn vector_confirmation_holds_at_the_thresholds() {
    vector_route_at_thresholds(&Harness::new("adversarial_vault"));
}

#[test]
fn vector_confirmation_fails_just_below_the_thresholds() {
    vector_route_below_thresholds(&Harness::new("adversarial_vault"));
}

#[test]
fn trace_length_counts_characters() {
    let h = Harness::new("adversarial_vault");
    let mut f = vector_candidate(&h, 0.8, 0);
    f.proof_trace = "é".repeat(30);
    assert_eq!(phase_d_prefilter(&f, &h.model, &h.signals, &h.cfg), Route::VectorConfirmed);
}

#[test]
fn isolated_view_functions_skip_reasoning() {
    graph_skip_route(&Harness::new("adversarial_vault"));
}

#[test]
fn other_findings_go_to_the_reasoner() {
    let h = Harness::new("adversarial_vault");
    let reasoner = quiet_mock();
    let f = finding("D-004", "Rewards accrue on deposit", Severity::Medium, &[("Bank", "deposit")]);
    let (kept, rec) = phase_d_apply(&h.ctx(&reasoner), f, stage::PHASE_D);
    assert_eq!(rec.route, Route::NeedsReasoner);
    assert!(kept.is_some() && rec.reasoner_used);
    assert_eq!(reasoner.call_count(stage::PHASE_D), 1);
}

#[test]
fn admin_route_precedes_vector_route() {
    let h = Harness::new("adversarial_vault");
    let mut f = vector_candidate(&h, 0.95, 80);
    f.affected_functions = vec![FnRef::new("Bank", "setFee")];
    assert_eq!(phase_d_prefilter(&f, &h.model, &h.signals, &h.cfg), Route::AdminTrust);
}
