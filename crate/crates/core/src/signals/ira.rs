//! Interaction risk questions at external call boundaries. Every signal
//! is an INFO-level prompt for follow-up reasoning, not a verdict.

use std::collections::BTreeSet;

use super::code::{self, Stmt};
use super::{Engine, Signal};
use crate::ccim::{CcimModel, FunctionRecord};
use crate::types::Severity;

fn question(rule: &str, subject: String, r: &FunctionRecord, line: usize, desc: String) -> Signal {
    Signal::new(Engine::Ira, rule, subject, Severity::Info, 0.3, desc)
        .on(r.fn_ref())
        .at(line)
}

fn result_handling(stmts: &[Stmt], line: usize, needle: &str) -> &'static str {
    let Some(s) = stmts.iter().find(|s| s.line == line && s.text.contains(needle)) else {
        return "used";
    };
    let t = s.text.as_str();
    if s.assignment().is_some() || ["return", "require", "if", "assert"].iter().any(|k| t.starts_with(k)) {
        "used"
    } else {
        "discarded"
    }
}

fn writes_after(r: &FunctionRecord, line: usize) -> Option<usize> {
    r.updates.iter().map(|u| u.line).filter(|&l| l > line).min()
}

pub fn run_ira(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        let f = r.fn_ref();
        let stmts = code::statements(r);
        let mut seen = BTreeSet::new();
        for cs in &r.call_sites {
            let boundary = format!("{f}:{}", cs.target.name);
            let target = &cs.target;
            let resolved = ccim.resolution.resolve(target);
            if seen.insert(("ret", boundary.clone())) {
                let how = result_handling(&stmts, cs.line, &format!(".{}(", cs.method));
                out.push(question(
                    "IRA-RETURN",
                    boundary.clone(),
                    r,
                    cs.line,
                    format!(
                        "return of `{}.{}` is {how} in {f}; can the callee return a misleading value or revert selectively?",
                        target.name, cs.method
                    ),
                ));
            }
            if let Some(w) = writes_after(r, cs.line) {
                if seen.insert(("reent", boundary.clone())) {
                    out.push(question(
                        "IRA-REENTRANCY",
                        boundary.clone(),
                        r,
                        cs.line,
                        format!(
                            "{f} updates storage on line {w} after calling `{}.{}`; can the callee re-enter before that write?",
                            target.name, cs.method
                        ),
                    ));
                }
            }
            match resolved {
                None => {
                    if seen.insert(("unres", boundary.clone())) {
                        out.push(question(
                            "IRA-UNRESOLVED",
                            boundary.clone(),
                            r,
                            cs.line,
                            format!(
                                "target `{target}` of {f} does not resolve to a single in-scope contract; what code runs at `{}`?",
                                cs.method
                            ),
                        ));
                    }
                }
                Some(callee) => {
                    if ccim.trust.trustgap(&r.owner, callee) && seen.insert(("gap", boundary.clone())) {
                        let pair = ccim
                            .trust
                            .pairs
                            .iter()
                            .find(|p| p.caller == r.owner && p.callee == callee);
                        let missing: Vec<String> = pair
                            .map(|p| p.assumes.difference(&p.enforces).cloned().collect())
                            .unwrap_or_default();
                        out.push(question(
                            "IRA-ASSUMPTION",
                            boundary.clone(),
                            r,
                            cs.line,
                            format!(
                                "{f} calls {callee} whose results assume `{}`, which {} never enforces; is the assumption met?",
                                missing.join("; "),
                                r.owner
                            ),
                        ));
                    }
                }
            }
        }
        for ll in &r.low_level_calls {
            let boundary = format!("{f}:{}", ll.receiver);
            if seen.insert(("ret", boundary.clone())) {
                let how = result_handling(&stmts, ll.line, &format!(".{}", ll.kind));
                out.push(question(
                    "IRA-RETURN",
                    boundary.clone(),
                    r,
                    ll.line,
                    format!("success flag of `{}.{}` is {how} in {f}; is failure handled?", ll.receiver, ll.kind),
                ));
            }
            if let Some(w) = writes_after(r, ll.line) {
                if seen.insert(("reent", boundary.clone())) {
                    out.push(question(
                        "IRA-REENTRANCY",
                        boundary.clone(),
                        r,
                        ll.line,
                        format!(
                            "{f} updates storage on line {w} after `{}.{}`; can the receiver re-enter?",
                            ll.receiver, ll.kind
                        ),
                    ));
                }
            }
            if seen.insert(("unres", boundary.clone())) {
                out.push(question(
                    "IRA-UNRESOLVED",
                    boundary.clone(),
                    r,
                    ll.line,
                    format!("low-level `{}` to `{}` in {f} reaches arbitrary code", ll.kind, ll.receiver),
                ));
            }
        }
    }
    out
}
