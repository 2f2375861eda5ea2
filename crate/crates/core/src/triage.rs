//! Cross-pipeline merge: tagged union, structural-card clustering, the
//! cross-pipeline indicator and the clipped confidence boost.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::IMPACT_KEYWORDS;
use crate::ccim::{CcimModel, FunctionRecord, GuardKind};
use crate::finding::{self, AttackerRole, Finding, Flag, ImpactClass, StructuralCard, CONF_MAX, CONF_MIN};
use crate::types::{FnRef, Pipeline};

/// The additive cross-pipeline bonus.
pub const BETA: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MergeError {
    #[error("finding id {0} occurs more than once")]
    IdCollision(String),
    #[error("confidence {conf} of {id} is outside [0.05, 0.95]")]
    ConfidenceRange { id: String, conf: f64 },
}

pub type Tagging = BTreeMap<String, Pipeline>;

/// Disjoint union; π is determined by argument position.
pub fn tag_and_union(fd: Vec<Finding>, fi: Vec<Finding>) -> Result<(Vec<Finding>, Tagging), MergeError> {
    let mut pi = Tagging::new();
    let mut all = Vec::with_capacity(fd.len() + fi.len());
    for (p, set) in [(Pipeline::D, fd), (Pipeline::I, fi)] {
        for f in set {
            if pi.insert(f.id.clone(), p).is_some() {
                return Err(MergeError::IdCollision(f.id));
            }
            all.push(f);
        }
    }
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((all, pi))
}

fn attacker_role(ccim: &CcimModel, r: &FunctionRecord) -> AttackerRole {
    let f = r.fn_ref();
    if ccim.is_admin(&f) {
        return AttackerRole::Admin;
    }
    let lower = r.name.to_ascii_lowercase();
    if (r.name.starts_with("on") && r.name[2..].starts_with(|c: char| c.is_ascii_uppercase()))
        || ["callback", "hook", "received"].iter().any(|k| lower.contains(k))
    {
        return AttackerRole::Contract;
    }
    let restricted = r
        .guards
        .iter()
        .any(|g| matches!(g.kind, GuardKind::Modifier | GuardKind::Check) && g.expr.starts_with("only"));
    if restricted {
        AttackerRole::User
    } else {
        AttackerRole::Unauthenticated
    }
}

/// Card extraction. The abused variable is the unique variable written on
/// the evidence lines, else the unique write of the vulnerable function.
pub fn extract_card(f: &Finding, ccim: &CcimModel) -> StructuralCard {
    let impact_class = finding::classify_impact(&f.claim_text(), &IMPACT_KEYWORDS);
    let Some(r) = f.affected_functions.iter().find_map(|g| ccim.record(g)) else {
        return StructuralCard {
            vulnerable_function: f.affected_functions.first().cloned().unwrap_or_else(|| FnRef::new("?", "?")),
            abused_state_variable: None,
            attacker_role: AttackerRole::Unauthenticated,
            impact_class,
            low_fidelity: true,
        };
    };
    let lines: BTreeSet<usize> = f.evidence_lines.iter().copied().collect();
    let on_lines: BTreeSet<String> = f
        .affected_functions
        .iter()
        .filter_map(|g| ccim.record(g))
        .flat_map(|g| g.updates.iter())
        .filter(|u| lines.contains(&u.line))
        .map(|u| u.var.to_string())
        .collect();
    let abused_state_variable = if on_lines.len() == 1 {
        on_lines.into_iter().next()
    } else if on_lines.is_empty() {
        let writes: Vec<String> = ccim.footprints.get(&r.fn_ref()).map(|p| p.writes.iter().map(ToString::to_string).collect()).unwrap_or_default();
        (writes.len() == 1).then(|| writes[0].clone())
    } else {
        None
    };
    StructuralCard {
        vulnerable_function: r.fn_ref(),
        abused_state_variable,
        attacker_role: attacker_role(ccim, r),
        impact_class,
        low_fidelity: false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Ordered by smallest member id.
    pub clusters: Vec<BTreeSet<String>>,
    /// Finding id to cluster index.
    pub sc: BTreeMap<String, usize>,
}

impl ClusterPartition {
    /// Disjoint and covering the given ids, with `sc` consistent.
    pub fn is_partition_of(&self, ids: &BTreeSet<String>) -> bool {
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.is_empty() || c.iter().any(|id| !seen.insert(id.clone())) {
                return false;
            }
        }
        seen == *ids
            && self.sc.len() == ids.len()
            && self.sc.iter().all(|(id, &i)| self.clusters.get(i).is_some_and(|c| c.contains(id)))
    }
}

/// Groups findings whose cards agree on function, variable and impact.
pub fn cluster(findings: &[Finding], cards: &BTreeMap<String, StructuralCard>) -> ClusterPartition {
    type Key = (FnRef, Option<String>, ImpactClass);
    let mut groups: BTreeMap<Key, BTreeSet<String>> = BTreeMap::new();
    for f in findings {
        let Some(c) = cards.get(&f.id) else { continue };
        let key = (c.vulnerable_function.clone(), c.abused_state_variable.clone(), c.impact_class);
        groups.entry(key).or_default().insert(f.id.clone());
    }
    let mut clusters: Vec<BTreeSet<String>> = groups.into_values().collect();
    clusters.sort_by(|a, b| a.first().cmp(&b.first()));
    let sc = clusters.iter().enumerate().flat_map(|(i, c)| c.iter().map(move |id| (id.clone(), i))).collect();
    ClusterPartition { clusters, sc }
}

/// 1 iff the cluster draws from both pipelines.
pub fn cross_indicator(cluster: &BTreeSet<String>, pi: &Tagging) -> u8 {
    let image: BTreeSet<Pipeline> = cluster.iter().filter_map(|id| pi.get(id).copied()).collect();
    u8::from(image.len() == 2)
}

pub fn boost_confidence(conf: f64, chi: u8) -> Result<f64, MergeError> {
    if !(CONF_MIN..=CONF_MAX).contains(&conf) {
        return Err(MergeError::ConfidenceRange { id: String::new(), conf });
    }
    Ok(CONF_MAX.min(conf + BETA * f64::from(chi)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergedFindingSet {
    /// Sorted by id; each carries its card, flags and related ids.
    pub findings: Vec<Finding>,
    pub pi: Tagging,
    pub partition: ClusterPartition,
    pub conf_post: BTreeMap<String, f64>,
}

impl MergedFindingSet {
    pub fn chi(&self, id: &str) -> u8 {
        self.partition.sc.get(id).map_or(0, |&i| cross_indicator(&self.partition.clusters[i], &self.pi))
    }
}

pub fn merge(fd: Vec<Finding>, fi: Vec<Finding>, ccim: &CcimModel) -> Result<MergedFindingSet, MergeError> {
    let (mut findings, pi) = tag_and_union(fd, fi)?;
    let cards: BTreeMap<String, StructuralCard> = findings.iter().map(|f| (f.id.clone(), extract_card(f, ccim))).collect();
    let partition = cluster(&findings, &cards);
    let mut conf_post = BTreeMap::new();
    for f in &mut findings {
        let idx = partition.sc[&f.id];
        let members = &partition.clusters[idx];
        let chi = cross_indicator(members, &pi);
        let post = boost_confidence(f.confidence, chi).map_err(|_| MergeError::ConfidenceRange {
            id: f.id.clone(),
            conf: f.confidence,
        })?;
        conf_post.insert(f.id.clone(), post);
        f.card = cards.get(&f.id).cloned();
        if f.card.as_ref().is_some_and(|c| c.low_fidelity) {
            f.flags.insert(Flag::LowFidelity);
        }
        if chi == 1 {
            f.flags.insert(Flag::CrossPipeline);
            let own = pi[&f.id];
            f.related = members.iter().filter(|id| pi[*id] != own).cloned().collect();
        }
    }
    Ok(MergedFindingSet {
        findings,
        pi,
        partition,
        conf_post,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Severity;

    fn f(id: &str, p: Pipeline, func: &str, title: &str) -> Finding {
        let mut x = Finding::new(p, title, Severity::High, vec![FnRef::new("V", func)]);
        x.id = id.into();
        x.confidence = 0.5;
        x
    }

    fn empty_ccim() -> CcimModel {
        let src = crate::ingest::AuditSource::single("A.sol", "contract A {}\n");
        crate::ccim::build(&src)
    }

    #[test]
    fn boost_examples() {
        assert!((boost_confidence(0.50, 1).unwrap() - 0.80).abs() < 1e-12);
        assert_eq!(boost_confidence(0.80, 1).unwrap(), 0.95);
        assert_eq!(boost_confidence(0.50, 0).unwrap(), 0.50);
        assert!(boost_confidence(0.99, 0).is_err());
        assert!(boost_confidence(0.01, 1).is_err());
    }

    #[test]
    fn union_and_collision() {
        let (all, pi) = tag_and_union(
            vec![f("D-001", Pipeline::D, "a", "x"), f("D-002", Pipeline::D, "a", "x"), f("D-003", Pipeline::D, "a", "x")],
            vec![f("I-001", Pipeline::I, "a", "x"), f("I-002", Pipeline::I, "a", "x")],
        )
        .unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(pi.values().filter(|p| **p == Pipeline::D).count(), 3);
        let err = tag_and_union(vec![f("X-1", Pipeline::D, "a", "x")], vec![f("X-1", Pipeline::I, "a", "x")]);
        assert_eq!(err.unwrap_err(), MergeError::IdCollision("X-1".into()));
    }

    #[test]
    fn cross_pipeline_cluster_boosts_both() {
        let ccim = empty_ccim();
        let m = merge(
            vec![f("D-001", Pipeline::D, "withdraw", "reentrancy drains funds")],
            vec![f("I-001", Pipeline::I, "withdraw", "reentrancy lets attacker steal"), f("I-002", Pipeline::I, "other", "dos")],
            &ccim,
        )
        .unwrap();
        assert_eq!(m.partition.clusters.len(), 2);
        assert!((m.conf_post["D-001"] - 0.8).abs() < 1e-12);
        assert!((m.conf_post["I-001"] - 0.8).abs() < 1e-12);
        assert_eq!(m.conf_post["I-002"], 0.5);
        let d = m.findings.iter().find(|x| x.id == "D-001").unwrap();
        assert!(d.has_flag(Flag::CrossPipeline));
        assert_eq!(d.related, vec!["I-001".to_string()]);
        assert!(d.card.as_ref().unwrap().low_fidelity);
    }

    #[test]
    fn singleton_and_same_pipeline_chi_zero() {
        let pi: Tagging = [("D-001".to_string(), Pipeline::D), ("D-002".to_string(), Pipeline::D)].into();
        let one: BTreeSet<String> = ["D-001".to_string()].into();
        let two: BTreeSet<String> = ["D-001".to_string(), "D-002".to_string()].into();
        assert_eq!(cross_indicator(&one, &pi), 0);
        assert_eq!(cross_indicator(&two, &pi), 0);
    }
}
