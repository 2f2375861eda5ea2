//! Deterministic finding cleanup: the self-contradiction filter and the
//! six ordered severity-recalibration rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ccim::CcimModel;
use crate::claims::{self, ADMIN_ONLY_CLAIM, MISSING_ACCESS};
use crate::finding::{Finding, Flag, ImpactClass};
use crate::types::{FnRef, Severity};

/// One rule firing on one finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleApplication {
    pub finding: String,
    pub rule: u8,
    pub from: Severity,
    /// `None` when the rule removed the finding.
    pub to: Option<Severity>,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub removed: Vec<String>,
    pub downgraded: Vec<String>,
}

/// Remove findings whose own text disproves them; keep them at INFO when
/// they also cite an evidence line.
pub fn self_contradiction_filter(findings: Vec<Finding>) -> (Vec<Finding>, FilterOutcome) {
    let mut out = FilterOutcome::default();
    let kept = findings
        .into_iter()
        .filter_map(|mut f| {
            let Some(phrase) = claims::self_disproving_phrase(&f) else {
                return Some(f);
            };
            if f.evidence_lines.is_empty() {
                log::info!("{}: removed, text says \"{phrase}\"", f.id);
                out.removed.push(f.id);
                None
            } else {
                f.severity = Severity::Info;
                f.flags.insert(Flag::SelfContradictory);
                f.notes.push(format!("self-contradictory (\"{phrase}\"): downgraded to INFO"));
                out.downgraded.push(f.id.clone());
                Some(f)
            }
        })
        .collect();
    (kept, out)
}

fn resolved<'a>(f: &'a Finding, ccim: &CcimModel) -> Vec<&'a FnRef> {
    f.affected_functions.iter().filter(|g| ccim.record(g).is_some()).collect()
}

fn all_admin(f: &Finding, ccim: &CcimModel) -> bool {
    let r = resolved(f, ccim);
    !r.is_empty() && r.iter().all(|g| ccim.is_admin(g))
}

fn moves_funds(f: &Finding, ccim: &CcimModel) -> bool {
    resolved(f, ccim).iter().any(|g| ccim.footprints.fund(g))
}

fn none_admin_entry(f: &Finding, ccim: &CcimModel) -> bool {
    let r = resolved(f, ccim);
    !r.is_empty()
        && r.iter().all(|g| {
            !ccim.is_admin(g) && ccim.record(g).is_some_and(|rec| rec.vis.is_entry())
        })
}

fn apply(f: &mut Finding, rule: u8, to: Severity, note: &str, log: &mut Vec<RuleApplication>) {
    if to == f.severity {
        return;
    }
    log.push(RuleApplication {
        finding: f.id.clone(),
        rule,
        from: f.severity,
        to: Some(to),
        note: note.to_string(),
    });
    f.notes.push(format!("rule {rule}: {note} ({} -> {to})", f.severity));
    f.severity = to;
}

/// Rules 1-4 and 6 on a single finding.
pub fn recalibrate_one(f: &mut Finding, ccim: &CcimModel) -> Vec<RuleApplication> {
    let mut log = Vec::new();
    pointwise_rules(f, ccim, &mut log);
    evidence_rule(f, ccim, &mut log);
    log
}

fn pointwise_rules(f: &mut Finding, ccim: &CcimModel, log: &mut Vec<RuleApplication>) {
    // (1) admin-only paths are LOW unless user funds move.
    if all_admin(f, ccim) && !moves_funds(f, ccim) && f.severity > Severity::Low {
        apply(f, 1, Severity::Low, "admin-only path without fund movement", log);
    }
    // (2) no concrete fund-loss path caps at MEDIUM.
    if !moves_funds(f, ccim) && f.severity > Severity::Medium {
        apply(f, 2, Severity::Medium, "no fund-loss path", log);
    }
    // (3) three or more unlikely preconditions lower one level.
    let n = claims::unlikely_preconditions(f);
    if n >= 3 {
        let to = f.severity.down_one();
        apply(f, 3, to, &format!("{n} unlikely preconditions"), log);
    }
    // (4) hedged wording without concrete steps caps at MEDIUM.
    let wording = format!("{}\n{}", f.description, f.attack_scenario).to_lowercase();
    if claims::is_hedged(&wording) && claims::attack_steps(&f.attack_scenario) < 2 && f.severity > Severity::Medium {
        apply(f, 4, Severity::Medium, "hedged language without attack steps", log);
    }
}

/// (6) CCIM access evidence overrides the finding's own claim.
fn evidence_rule(f: &mut Finding, ccim: &CcimModel, log: &mut Vec<RuleApplication>) {
    let claim = f.claim_text();
    if claims::any_of(&claim, MISSING_ACCESS) && all_admin(f, ccim) {
        f.flags.insert(Flag::AccessEvidenceCorrected);
        if f.severity > Severity::Low {
            apply(f, 6, Severity::Low, "claimed missing access control, CCIM shows an admin guard", log);
        }
    } else if claims::any_of(&claim, ADMIN_ONLY_CLAIM) && none_admin_entry(f, ccim) {
        f.flags.insert(Flag::AccessEvidenceCorrected);
        let to = f.severity.up_one();
        apply(f, 6, to, "claimed admin-only path, CCIM shows an unguarded entry point", log);
    }
}

fn root_cause(f: &Finding) -> (Vec<FnRef>, ImpactClass) {
    let mut fns = f.affected_functions.clone();
    fns.sort();
    match &f.card {
        Some(c) => (vec![c.vulnerable_function.clone()], c.impact_class),
        None => (fns, f.impact()),
    }
}

/// Rule 5: keep the most impactful finding per root cause.
pub fn dedupe_root_cause(findings: Vec<Finding>) -> (Vec<Finding>, Vec<RuleApplication>) {
    let mut best: BTreeMap<(Vec<FnRef>, ImpactClass), usize> = BTreeMap::new();
    for (i, f) in findings.iter().enumerate() {
        let key = root_cause(f);
        match best.get(&key) {
            Some(&j) => {
                let g = &findings[j];
                let better = f
                    .severity
                    .cmp(&g.severity)
                    .then_with(|| f.confidence.total_cmp(&g.confidence))
                    .then_with(|| g.id.cmp(&f.id))
                    .is_gt();
                if better {
                    best.insert(key, i);
                }
            }
            None => {
                best.insert(key, i);
            }
        }
    }
    let keep: std::collections::BTreeSet<usize> = best.values().copied().collect();
    let mut log = Vec::new();
    let mut out = Vec::new();
    for (i, f) in findings.into_iter().enumerate() {
        if keep.contains(&i) {
            out.push(f);
        } else {
            log.push(RuleApplication {
                finding: f.id.clone(),
                rule: 5,
                from: f.severity,
                to: None,
                note: "root-cause duplicate".into(),
            });
        }
    }
    (out, log)
}

/// The six rules in order over a finding set.
pub fn recalibrate_severity(findings: Vec<Finding>, ccim: &CcimModel) -> (Vec<Finding>, Vec<RuleApplication>) {
    let mut log = Vec::new();
    let findings: Vec<Finding> = findings
        .into_iter()
        .map(|mut f| {
            pointwise_rules(&mut f, ccim, &mut log);
            f
        })
        .collect();
    let (kept, dup_log) = dedupe_root_cause(findings);
    log.extend(dup_log);
    let kept = kept
        .into_iter()
        .map(|mut f| {
            evidence_rule(&mut f, ccim, &mut log);
            f
        })
        .collect();
    (kept, log)
}
