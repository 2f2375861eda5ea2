//! Commitment invalidation: approvals granted to a spender variable that
//! outlive a rotation of that variable.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{code, Engine, Signal};
use crate::ccim::{CcimModel, FunctionKind, FunctionRecord};
use crate::lexer;
use crate::types::{Severity, VarId};

static REVOKE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:approve|safeApprove|forceApprove)\s*\(\s*[^,()]+(?:\([^()]*\))?\s*,\s*0\s*\)").unwrap()
});

fn revokes(ccim: &CcimModel, r: &FunctionRecord) -> bool {
    code::reachable(ccim, r)
        .iter()
        .any(|x| REVOKE_RE.is_match(&lexer::mask(&x.body)))
}

pub fn run_cir(ccim: &CcimModel) -> Vec<Signal> {
    let approved: BTreeSet<&VarId> = ccim.deps.approvals.values().flatten().collect();
    let mut out = Vec::new();
    for v in approved {
        let grantors: Vec<String> = ccim
            .deps
            .approvals
            .iter()
            .filter(|(_, vs)| vs.contains(v))
            .map(|(f, _)| f.to_string())
            .collect();
        for g in ccim.deps.writers_of(v) {
            let Some(r) = ccim.record(g) else { continue };
            if r.kind == FunctionKind::Constructor || revokes(ccim, r) {
                continue;
            }
            let line = r
                .updates
                .iter()
                .find(|u| &u.var == v)
                .map_or(r.src.0, |u| u.line);
            out.push(
                Signal::new(
                    Engine::Cir,
                    "CIR-STALE-APPROVAL",
                    format!("{g}:{}", v.name),
                    Severity::Medium,
                    0.6,
                    format!(
                        "{g} replaces `{v}` without revoking the allowance granted by {}",
                        grantors.join(", ")
                    ),
                )
                .on(g.clone())
                .at(line)
                .about(v.to_string()),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccim;
    use crate::ingest::AuditSource;

    const BASE: &str = "interface IERC20 { function approve(address s, uint a) external returns (bool); }\ncontract T {\n    IERC20 token;\n    address spender;\n    function grant(uint a) external { token.approve(spender, a); }\n    function setSpender(address s) external {\n        BODY\n        spender = s;\n    }\n}\n";

    fn run(body: &str) -> Vec<Signal> {
        let src = BASE.replace("BODY", body);
        run_cir(&ccim::build(&AuditSource::single("T.sol", &src)))
    }

    #[test]
    fn rotation_without_revocation() {
        let got = run("");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].function.as_ref().unwrap().name, "setSpender");
    }

    #[test]
    fn rotation_with_revocation() {
        assert!(run("token.approve(spender, 0);").is_empty());
    }

    #[test]
    fn no_approvals() {
        let src = "contract N {\n    address s;\n    function set(address x) external { s = x; }\n}\n";
        assert!(run_cir(&ccim::build(&AuditSource::single("N.sol", src))).is_empty());
    }
}
