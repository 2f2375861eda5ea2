//! Keyword heuristics over finding text: claim classification, the
//! self-disproving phrase list, hedging and precondition counting.
//!
//! All inputs are expected lowercased (see [`Finding::text`]).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::finding::{contains_word, contains_word_prefix, Finding};

/// Refutable claim types for deterministic verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimType {
    MissingAccessControl,
    Reentrancy,
    IntegerOverflowGe08,
    EvmRace,
    Other,
}

pub const SELF_DISPROVING: &[&str] = &[
    "by design",
    "intended behavior",
    "intended behaviour",
    "not a vulnerability",
    "works as intended",
    "working as intended",
    "expected behavior",
    "expected behaviour",
    "not exploitable",
    "is a false positive",
];

pub const MISSING_ACCESS: &[&str] = &[
    "missing access control",
    "no access control",
    "lacks access control",
    "lack of access control",
    "without access control",
    "missing authorization",
    "missing modifier",
    "anyone can call",
    "any user can call",
    "anyone can invoke",
    "arbitrary caller",
    "unprotected",
    "unrestricted",
    "permissionless",
    "not restricted",
];

/// Claims that a path is restricted to privileged roles.
pub const ADMIN_ONLY_CLAIM: &[&str] = &[
    "only the owner",
    "only owner can",
    "only the admin",
    "only admin can",
    "admin-only",
    "owner-only",
    "requires admin",
    "privileged role",
    "trusted role",
];

pub const RACE: &[&str] = &["race condition", "race-condition", "data race", "concurrent execution"];

pub const REENTRANCY: &[&str] = &["reentran", "re-entran"];

pub const OVERFLOW: &[&str] = &["overflow", "underflow"];

pub const CENTRALIZATION: &[&str] = &[
    "centraliz",
    "too powerful",
    "owner can rug",
    "single point of failure",
    "trust the owner",
    "trusted owner",
    "admin can",
    "owner can",
    "privileged owner",
];

pub const HEDGES: &[&str] = &["may", "might", "could", "potentially", "possibly", "perhaps", "theoretically", "in theory"];

/// Markers of a precondition the attack depends on.
pub const UNLIKELY_PRECONDITIONS: &[&str] = &[
    "assuming",
    "assumes",
    "provided that",
    "only if",
    "requires that",
    "must first",
    "unlikely",
    "if the owner",
    "if the admin",
    "compromised",
    "colluding",
    "precondition",
];

pub const FUND_THEFT: &[&str] = &["steal", "theft", "drain", "siphon", "stolen", "loss of funds"];

pub const STATE_CORRUPTION: &[&str] = &["corrupt", "overwrite", "inconsistent state", "state corruption"];

pub const EXTERNAL_CALL: &[&str] = &["external call", "callback", "reentran", ".call", "low-level call", "call to"];

pub fn any_of(lower: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| lower.contains(p))
}

/// Classify a finding's claim (title and description). Ordered so that the
/// most specific refutable kind wins; `OTHER` is the catch-all.
pub fn classify_claim(f: &Finding) -> ClaimType {
    let t = f.claim_text();
    if any_of(&t, RACE) {
        ClaimType::EvmRace
    } else if any_of(&t, REENTRANCY) {
        ClaimType::Reentrancy
    } else if any_of(&t, MISSING_ACCESS) {
        ClaimType::MissingAccessControl
    } else if OVERFLOW.iter().any(|w| contains_word_prefix(&t, w)) {
        ClaimType::IntegerOverflowGe08
    } else {
        ClaimType::Other
    }
}

/// The first self-disproving phrase in the finding's own text.
pub fn self_disproving_phrase(f: &Finding) -> Option<&'static str> {
    let t = f.text();
    SELF_DISPROVING.iter().copied().find(|p| t.contains(p))
}

pub fn is_hedged(lower: &str) -> bool {
    HEDGES.iter().any(|h| contains_word(lower, h))
}

static STEP_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)(?:^|\s|\()(?:\d+[.)]|step\s*\d+)\s").unwrap());

/// Enumerated attack steps ("1.", "2)", "step 3") in a scenario.
pub fn attack_steps(scenario: &str) -> usize {
    STEP_RE.find_iter(&scenario.to_lowercase()).count()
}

/// Count precondition markers in the attack scenario and description.
pub fn unlikely_preconditions(f: &Finding) -> usize {
    let t = format!("{}\n{}", f.description, f.attack_scenario).to_lowercase();
    UNLIKELY_PRECONDITIONS.iter().map(|p| t.matches(p).count()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FnRef, Pipeline, Severity};

    fn f(title: &str, desc: &str) -> Finding {
        let mut f = Finding::new(Pipeline::D, title, Severity::High, vec![FnRef::new("A", "f")]);
        f.description = desc.into();
        f
    }

    #[test]
    fn claim_classes() {
        assert_eq!(classify_claim(&f("Race condition in claim", "")), ClaimType::EvmRace);
        assert_eq!(classify_claim(&f("Reentrancy in withdraw", "")), ClaimType::Reentrancy);
        assert_eq!(classify_claim(&f("Missing access control on setFee", "")), ClaimType::MissingAccessControl);
        assert_eq!(classify_claim(&f("Integer overflow in add", "")), ClaimType::IntegerOverflowGe08);
        assert_eq!(classify_claim(&f("Stale oracle price", "")), ClaimType::Other);
    }

    #[test]
    fn hedges_and_steps() {
        assert!(is_hedged("this could be abused"));
        assert!(!is_hedged("the mayor decides"));
        assert_eq!(attack_steps("1. deposit 2. withdraw twice"), 2);
        assert_eq!(attack_steps("no steps here"), 0);
    }

    #[test]
    fn phrases_are_case_insensitive() {
        assert_eq!(self_disproving_phrase(&f("x", "This is Intended Behavior.")), Some("intended behavior"));
        assert_eq!(self_disproving_phrase(&f("x", "clean")), None);
    }
}
