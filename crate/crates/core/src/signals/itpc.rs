//! Lightweight inter-procedural precondition checking: callers that forward
//! user input into a callee without establishing the callee's inferred
//! parameter preconditions.

use std::collections::BTreeSet;

use super::{code, Engine, Signal};
use crate::ccim::{parser, CcimModel, FunctionRecord, GuardKind};
use crate::expr;
use crate::lexer;
use crate::types::{FnRef, Severity};

/// An inferred precondition over parameter placeholders `$0`, `$1`, ...
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Precondition {
    pub template: String,
    pub params: BTreeSet<usize>,
    pub line: usize,
}

fn substitute(text: &str, map: &mut dyn FnMut(&str) -> Option<String>) -> String {
    let mut out = String::new();
    let mut last = 0;
    let bytes = text.as_bytes();
    for id in lexer::identifiers(text) {
        if id.start > 0 && bytes[id.start - 1] == b'.' {
            continue;
        }
        if let Some(rep) = map(id.text) {
            out.push_str(&text[last..id.start]);
            out.push_str(&rep);
            last = id.end;
        }
    }
    out.push_str(&text[last..]);
    out
}

fn canon(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Non-access `require`/`if-revert` guards that mention a parameter.
pub fn preconditions(r: &FunctionRecord) -> Vec<Precondition> {
    let names: Vec<&str> = r.params.iter().map(|p| p.name.as_str()).collect();
    r.requires
        .iter()
        .filter(|g| matches!(g.kind, GuardKind::Require | GuardKind::IfRevert))
        .filter(|g| !parser::is_access_expr(&g.expr))
        .filter_map(|g| {
            let mut used = BTreeSet::new();
            let t = substitute(&g.expr, &mut |id| {
                let i = names.iter().position(|n| !n.is_empty() && *n == id)?;
                used.insert(i);
                Some(format!("${i}"))
            });
            (!used.is_empty()).then(|| Precondition {
                template: canon(&t),
                params: used,
                line: g.line,
            })
        })
        .collect()
}

/// Does the function move value while doing unchecked arithmetic?
pub fn is_high_risk(ccim: &CcimModel, r: &FunctionRecord) -> bool {
    let value = r.mutability == crate::ccim::Mutability::Payable || ccim.footprints.fund(&r.fn_ref());
    value && !r.unchecked.is_empty()
}

struct Edge<'a> {
    caller: &'a FunctionRecord,
    callee: &'a FunctionRecord,
    line: usize,
    args: &'a [String],
}

fn edges(ccim: &CcimModel) -> Vec<Edge<'_>> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for ic in &r.internal_call_sites {
            if let Some(c) = ccim.record(&ic.callee) {
                out.push(Edge {
                    caller: r,
                    callee: c,
                    line: ic.line,
                    args: &ic.args,
                });
            }
        }
        for cs in &r.call_sites {
            let Some(owner) = ccim.resolution.resolve(&cs.target) else { continue };
            if let Some(c) = ccim.record(&FnRef::new(owner, &cs.method)) {
                out.push(Edge {
                    caller: r,
                    callee: c,
                    line: cs.line,
                    args: &cs.args,
                });
            }
        }
    }
    out
}

fn user_controlled(arg: &str, caller: &FunctionRecord) -> bool {
    let params = code::param_names(caller);
    lexer::identifiers(arg).iter().any(|id| params.contains(id.text)) || arg.contains("msg.value")
}

pub fn run_itpc_lite(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for e in edges(ccim) {
        let established: BTreeSet<String> = e
            .caller
            .requires
            .iter()
            .map(|g| canon(&g.expr))
            .collect();
        for pre in preconditions(e.callee) {
            if pre.params.iter().any(|&i| i >= e.args.len()) {
                continue;
            }
            if !pre.params.iter().any(|&i| user_controlled(&e.args[i], e.caller)) {
                continue;
            }
            let concrete = pre
                .params
                .iter()
                .fold(pre.template.clone(), |acc, &i| acc.replace(&format!("${i}"), &format!("({})", e.args[i])));
            let bare = pre
                .params
                .iter()
                .fold(pre.template.clone(), |acc, &i| acc.replace(&format!("${i}"), &canon(&e.args[i])));
            if established.contains(&bare) || established.contains(&canon(&concrete)) {
                continue;
            }
            if expr::parse_expr(&concrete).and_then(|x| expr::eval(&x)).is_some_and(|v| v != 0) {
                continue;
            }
            let caller = e.caller.fn_ref();
            let callee = e.callee.fn_ref();
            out.push(
                Signal::new(
                    Engine::Itpc,
                    "ITPC-UNESTABLISHED",
                    format!("{caller}->{}:{}", callee, e.line),
                    Severity::Low,
                    0.4,
                    format!("{caller} forwards caller input to {callee}, which requires `{bare}`; the caller never checks it"),
                )
                .on(caller)
                .at(e.line),
            );
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out.dedup_by(|a, b| a.id == b.id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccim;
    use crate::ingest::AuditSource;

    fn run(caller_body: &str) -> Vec<Signal> {
        let src = format!(
            "contract C {{\n    uint total;\n    function _add(uint amount) internal {{\n        require(amount > 0);\n        total += amount;\n    }}\n    function add(uint x) external {{\n        {caller_body}\n        _add(x);\n    }}\n}}\n"
        );
        run_itpc_lite(&ccim::build(&AuditSource::single("C.sol", &src)))
    }

    #[test]
    fn unchecked_forwarding_is_flagged() {
        let got = run("");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].function.as_ref().unwrap().name, "add");
    }

    #[test]
    fn caller_recheck_clears() {
        assert!(run("require(x > 0);").is_empty());
    }

    #[test]
    fn preconditions_are_templated() {
        let src = "contract C {\n    function f(uint a, uint b) external { require(a > 0 && b < a); }\n}\n";
        let m = ccim::build(&AuditSource::single("C.sol", src));
        let p = preconditions(m.lookup("f").unwrap());
        assert_eq!(p[0].template, "$0>0&&$1<$0");
        assert_eq!(p[0].params.len(), 2);
    }
}
