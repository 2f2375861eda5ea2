mod common;

use common::scenario::*;
use common::Harness;

#[test]
fn rule1_admin_only_without_funds_is_low() {
    rule1_admin_only_without_funds(&Harness::new("adversarial_vault"));
}

#[test]
fn rule2_no_fund_path_caps_at_medium() {
    rule2_no_fund_path(&Harness::new("adversarial_vault"));
}

#[test]
fn rule3_three_unlikely_preconditions_lower_one_level() {
    rule3_unlikely_preconditions(&Harness::new("adversarial_vault"));
}

#[test]
fn rule4_hedged_claims_without_steps_cap_at_medium() {
    rule4_hedged_without_steps(&Harness::new("adversarial_vault"));
}

#[test]
fn rule5_keeps_one_finding_per_root_cause() {
    rule5_one_per_root_cause(&Harness::new("adversarial_vault"));
}

#[test]
fn rule6_model_access_evidence_overrides_the_claim() {
    rule6_access_evidence(&Harness::new("adversarial_vault"));
}

#[test]
fn every_self_disproving_phrase_fires() {
    self_disproving_phrases();
}
