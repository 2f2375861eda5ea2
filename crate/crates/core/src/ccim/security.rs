//! Security views: state dependencies, admin classification, rotation risk
//! and the caller/callee trust model.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::model::*;
use crate::types::{FnRef, VarId};

/// Known role-check shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCatalogue {
    /// Modifier names that gate on a privileged role.
    pub modifiers: Vec<String>,
    /// Regexes over normalized guard expressions.
    pub guard_patterns: Vec<String>,
}

const ROLE_NAMES: &str = "owner|_owner|admin|_admin|governance|governor|gov|operator|manager|guardian|timelock|controller|keeper|minter|factory|pendingOwner|pendingAdmin|dao|multisig|treasury";

impl Default for RoleCatalogue {
    fn default() -> Self {
        let modifiers = [
            "onlyOwner", "onlyRole", "onlyAdmin", "onlyGovernance", "onlyGov", "onlyGovernor",
            "onlyOperator", "onlyManager", "onlyMinter", "onlyGuardian", "onlyKeeper",
            "onlyAuthorized", "onlyProxyAdmin", "onlyTimelock", "onlyController", "onlyDAO",
            "onlyMultisig", "onlyRoles", "onlyOwnerOrRoles", "auth", "requiresAuth",
        ];
        let sender = r"(?:msg\.sender|_msgSender\(\))";
        let role = format!(r"(?:{ROLE_NAMES})(?:\(\))?");
        let guard_patterns = vec![
            format!(r"{sender}\s*[=!]=\s*{role}(?:$|[^A-Za-z0-9_$])"),
            format!(r"(?:^|[^A-Za-z0-9_$.]){role}\s*[=!]=\s*{sender}"),
            r"\bhasRole\s*\(".to_string(),
            r"\bhasAnyRole\s*\(".to_string(),
            format!(r"\bwards\s*\[\s*{sender}\s*\]"),
            r"^_checkOwner\(".to_string(),
            r"^_checkRole\(".to_string(),
            r"^_checkRoles\(".to_string(),
            r"^_only(?:Owner|Admin|Governance|Role|Gov)\w*\(".to_string(),
            r"^_require(?:Owner|Admin|Role)\w*\(".to_string(),
        ];
        RoleCatalogue {
            modifiers: modifiers.iter().map(|s| s.to_string()).collect(),
            guard_patterns,
        }
    }
}

impl RoleCatalogue {
    pub fn compiled(&self) -> CompiledCatalogue {
        CompiledCatalogue {
            modifiers: self.modifiers.iter().cloned().collect(),
            patterns: self
                .guard_patterns
                .iter()
                .filter_map(|p| Regex::new(p).ok())
                .collect(),
        }
    }
}

pub struct CompiledCatalogue {
    modifiers: BTreeSet<String>,
    patterns: Vec<Regex>,
}

impl CompiledCatalogue {
    pub fn is_role_modifier(&self, name: &str) -> bool {
        self.modifiers.contains(name)
    }

    pub fn is_role_guard(&self, g: &Guard) -> bool {
        self.patterns.iter().any(|p| p.is_match(&g.expr))
    }

    /// The first role-check evidence of a record: modifier use or guard.
    pub fn admin_evidence(&self, r: &FunctionRecord) -> Option<(String, usize)> {
        if let Some(m) = r.modifiers.iter().find(|m| self.is_role_modifier(&m.name)) {
            return Some((m.name.clone(), m.line));
        }
        r.guards
            .iter()
            .find(|g| self.is_role_guard(g))
            .map(|g| (g.expr.clone(), g.line))
    }
}

/// admin(f) ⇔ G(f) ∩ 𝒫_role ≠ ∅, modifier names folded into G(f).
pub fn classify_admin(records: &[FunctionRecord], catalogue: &RoleCatalogue) -> BTreeSet<FnRef> {
    let cat = catalogue.compiled();
    records
        .iter()
        .filter(|r| cat.admin_evidence(r).is_some())
        .map(FunctionRecord::fn_ref)
        .collect()
}

fn strip_cast(arg: &str) -> &str {
    let a = arg.trim();
    for p in ["address(", "payable("] {
        if let Some(rest) = a.strip_prefix(p) {
            return strip_cast(rest.strip_suffix(')').unwrap_or(rest));
        }
    }
    a
}

/// approvals(f): storage variables passed as the recipient of
/// `approve`/`safeApprove` call sites.
pub fn approvals_of(r: &FunctionRecord) -> BTreeSet<VarId> {
    r.call_sites
        .iter()
        .filter(|x| matches!(x.method.as_str(), "approve" | "safeApprove"))
        .filter_map(|x| x.args.first())
        .filter_map(|a| {
            let name = strip_cast(a);
            r.reads.iter().find(|v| v.name == name).cloned()
        })
        .collect()
}

/// δ_W, δ_R, uses and approvals. `vars` is the variable universe; every
/// variable gets an entry in each map, possibly empty.
pub fn compute_state_dependencies(
    records: &[FunctionRecord],
    footprints: &Footprints,
    vars: &BTreeSet<VarId>,
) -> StateDependencyMap {
    let mut deps = StateDependencyMap::default();
    let mut universe = vars.clone();
    for fp in footprints.per_function.values() {
        universe.extend(fp.reads.iter().cloned());
        universe.extend(fp.writes.iter().cloned());
    }
    for v in &universe {
        deps.writers.insert(v.clone(), BTreeSet::new());
        deps.readers.insert(v.clone(), BTreeSet::new());
        deps.uses.insert(v.clone(), BTreeSet::new());
    }
    for (f, fp) in &footprints.per_function {
        for v in &fp.writes {
            deps.writers.get_mut(v).unwrap().insert(f.clone());
        }
        for v in &fp.reads {
            deps.readers.get_mut(v).unwrap().insert(f.clone());
        }
    }
    for r in records {
        let f = r.fn_ref();
        let appr = approvals_of(r);
        for x in &r.call_sites {
            deps.uses.entry(x.target.clone()).or_default().insert(f.clone());
        }
        for v in &appr {
            deps.uses.entry(v.clone()).or_default().insert(f.clone());
        }
        deps.approvals.insert(f, appr);
    }
    deps
}

/// rot(v) ⇔ (∃f ∈ δ_W(v): admin(f)) ∧ uses(v) ≠ ∅.
pub fn flag_rotation_risks(deps: &StateDependencyMap, admin_set: &BTreeSet<FnRef>) -> BTreeSet<VarId> {
    deps.writers
        .iter()
        .filter(|(v, ws)| ws.iter().any(|f| admin_set.contains(f)) && deps.uses.get(*v).is_some_and(|u| !u.is_empty()))
        .map(|(v, _)| v.clone())
        .collect()
}

/// guard_{c1}(g): caller-gating guards of `g`. Source rarely names the
/// calling contract, so every caller-referencing guard counts for all callers.
pub fn caller_guards(r: &FunctionRecord, cat: &CompiledCatalogue) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = r.guards.iter().map(|g| g.expr.clone()).collect();
    for m in &r.modifiers {
        if cat.is_role_modifier(&m.name) {
            out.insert(if m.args.is_empty() {
                m.name.clone()
            } else {
                format!("{}({})", m.name, m.args)
            });
        }
    }
    out
}

/// assumes/enforces per contract edge, trust gaps and callbacks.
pub fn compute_trust_model(graph: &CallGraph, records: &[FunctionRecord], catalogue: &RoleCatalogue) -> TrustModel {
    let cat = catalogue.compiled();
    let by_ref: BTreeMap<FnRef, &FunctionRecord> = records.iter().map(|r| (r.fn_ref(), r)).collect();
    let mut pairs = Vec::new();
    for (c1, c2) in &graph.contract_edges {
        let assumes: BTreeSet<String> = graph
            .edges
            .iter()
            .filter(|(f, g)| f.owner == *c1 && g.owner == *c2)
            .filter_map(|(_, g)| by_ref.get(g))
            .flat_map(|g| g.posts.iter().cloned())
            .collect();
        let enforces: BTreeSet<String> = records
            .iter()
            .filter(|g| g.owner == *c2)
            .flat_map(|g| caller_guards(g, &cat))
            .collect();
        let gap = !assumes.is_subset(&enforces);
        pairs.push(TrustPair {
            caller: c1.clone(),
            callee: c2.clone(),
            assumes,
            enforces,
            gap,
        });
    }
    let callbacks = graph
        .contract_edges
        .iter()
        .filter(|(a, b)| graph.contract_edges.contains(&(b.clone(), a.clone())))
        .map(|(a, b)| if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) })
        .collect();
    TrustModel { pairs, callbacks }
}
