mod common;


use common::scenario::*;
use common::{finding, mock, quiet_mock, Harness};
use solaudit_core::finding::{Finding, Flag};
use solaudit_core::funnel::{self, run_funnel, FunnelConfig, Verdict, SVE_CHECKS};
use solaudit_core::reasoner::{stage, Reasoner};
use solaudit_core::triage::merge;
use solaudit_core::types::Severity;

#[test]
fn adversarial_set_keeps_only_the_genuine_finding() {
    funnel_filters_adversarial_set(&Harness::new("adversarial_vault"));
}

#[test]
fn every_stage_outputs_a_subset_of_its_input() {
    funnel_stages_shrink(&Harness::new("adversarial_vault"));
}

#[test]
fn funnel_is_idempotent() {
    funnel_idempotent(&Harness::new("adversarial_vault"));
}

#[test]
fn uncertain_verdicts_stay_flagged_unverified() {
    let h = Harness::new("adversarial_vault");
    let reasoner = quiet_mock();
    let (fd, fi) = adversarial(&h);
    let merged = merge(fd, fi, &h.model).unwrap();
    let (out, _) = run_funnel(&merged, &h.ctx(&reasoner), &FunnelConfig::default());
    assert!(out.iter().all(|f| f.has_flag(Flag::Unverified)));
    assert_eq!(reasoner.call_count(stage::SVE_L2), out.len());
}

#[test]
fn verified_verdict_clears_the_unverified_flag() {
    let h = Harness::new("adversarial_vault");
    let reasoner = mock(r#"{"version": 1, "rules": [
        {"stage": "sve_l2", "response": {"verdict": "VERIFIED", "argument": "rewards zeroed after the call"}}
    ]}"#);
    let (fd, fi) = adversarial(&h);
    let merged = merge(fd, fi, &h.model).unwrap();
    let (out, stats) = run_funnel(&merged, &h.ctx(&reasoner), &FunnelConfig::default());
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|f| !f.has_flag(Flag::Unverified)));
    assert_eq!(stats.stage(stage::SVE_L2).unwrap().tallies[&Verdict::Confirmed], 2);
}

#[test]
fn stage3_disproof_needs_a_quote_from_the_source() {
    let h = Harness::new("adversarial_vault");
    let quoted = mock(r#"{"version": 1, "rules": [
        {"stage": "stage3", "response": {"claim": "c", "prevention": "p", "verdict": "DISPROVED", "quote": "rewards[msg.sender] = 0;"}}
    ]}"#);
    let invented = mock(r#"{"version": 1, "rules": [
        {"stage": "stage3", "response": {"claim": "c", "prevention": "p", "verdict": "DISPROVED", "quote": "require(!entered);"}}
    ]}"#);
    let mut f = finding("D-009", "Reentrancy in claim", Severity::High, &[("Bank", "claim")]);
    let rec = funnel::stage3_route_and_verify(&h.ctx(&quoted), &mut f);
    assert_eq!(rec.verdict, Verdict::Disproved);
    assert_eq!(rec.lines, vec![h.line_of("Bank", "claim", "rewards[msg.sender] = 0")]);

    let mut g = finding("D-010", "Reentrancy in claim", Severity::High, &[("Bank", "claim")]);
    let rec = funnel::stage3_route_and_verify(&h.ctx(&invented), &mut g);
    assert_eq!(rec.verdict, Verdict::Uncertain);
    assert!(g.has_flag(Flag::ProtocolViolation));
}

#[test]
fn each_verdict_engine_check_fires_alone() {
    let h = Harness::new("adversarial_vault");
    let all = [true; 8];
    let cases: [(usize, Finding); 8] = [
        (0, finding("X-1", "Reentrancy through withdraw", Severity::High, &[("Bank", "withdraw")])),
        (1, finding("X-2", "Attacker can steal the fee", Severity::High, &[("Bank", "setFee")])),
        (2, finding("X-3", "State corruption of the fee quote", Severity::Medium, &[("Bank", "feeOn")])),
        (3, finding("X-4", "Anyone can call setFee", Severity::High, &[("Bank", "setFee")])),
        (4, finding("X-5", "Integer overflow in deposit", Severity::Medium, &[("Bank", "deposit")])),
        (5, finding("X-6", "Broken claim path", Severity::Medium, &[("Bank", "claim"), ("Bank", "sweepAll")])),
        (6, finding("X-7", "Broken claim path", Severity::Medium, &[("Bank", "claim")])),
        (7, finding("X-8", "External call to the fee recipient", Severity::Medium, &[("Bank", "setFee")])),
    ];
    let outside = h.line_of("Bank", "setFee", "fee = next");
    for (want, mut f) in cases {
        if want == 6 {
            f.evidence_lines = vec![outside];
        }
        let rec = funnel::sve_layer1(&f, &h.model, &h.source, &all);
        assert_eq!(rec.verdict, Verdict::Disproved, "{}", SVE_CHECKS[want]);
        assert_eq!(rec.evidence, SVE_CHECKS[want], "{}", f.id);
        let mut off = all;
        off[want] = false;
        let rec = funnel::sve_layer1(&f, &h.model, &h.source, &off);
        assert_ne!(rec.evidence, SVE_CHECKS[want]);
    }
    let control = finding("X-9", "Reentrancy in claim drains rewards", Severity::High, &[("Bank", "claim")]);
    assert_eq!(funnel::sve_layer1(&control, &h.model, &h.source, &all).verdict, Verdict::Passed);
}

#[test]
fn bare_centralization_and_self_disproving_text_are_filtered() {
    let h = Harness::new("adversarial_vault");
    let central = finding("D-1", "Centralization risk: owner can change the fee", Severity::Medium, &[("Bank", "setFee")]);
    assert_eq!(funnel::stage2_filter(&central, &h.model).evidence, "centralization");
    let mut f = finding("D-2", "Fee rounding", Severity::Low, &[("Bank", "feeOn")]);
    f.description = "The rounding is by design.".into();
    assert_eq!(funnel::stage2_filter(&f, &h.model).evidence, "self-disproving: by design");
    let ok = finding("D-3", "Reentrancy in claim", Severity::High, &[("Bank", "claim")]);
    assert_eq!(funnel::stage2_filter(&ok, &h.model).verdict, Verdict::Passed);
}
