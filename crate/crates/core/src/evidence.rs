//! Prompt context assembled from the model: numbered source, structural
//! facts, call-graph-expanded source blocks and access-control bundles.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::ccim::{CcimModel, FunctionRecord};
use crate::finding::{contains_word, Finding};
use crate::types::{normalize_ws, FnRef};

/// The record's text with concatenation line numbers.
pub fn numbered(r: &FunctionRecord) -> String {
    r.body
        .lines()
        .enumerate()
        .map(|(i, t)| format!("{:>5} | {t}\n", r.src.0 + i))
        .collect()
}

/// Structural facts of a record, one per line.
pub fn facts(ccim: &CcimModel, r: &FunctionRecord) -> String {
    let f = r.fn_ref();
    let list = |v: Vec<String>| if v.is_empty() { "none".to_string() } else { v.join(", ") };
    let mut out = String::new();
    let _ = writeln!(out, "Visibility: {:?}, mutability: {:?}", r.vis, r.mutability);
    let _ = writeln!(out, "Modifiers: {}", list(r.modifiers.iter().map(|m| m.name.clone()).collect()));
    let _ = writeln!(out, "Guards: {}", list(r.requires.iter().map(|g| format!("`{}` (line {})", g.expr, g.line)).collect()));
    let fp = ccim.footprints.get(&f);
    let _ = writeln!(out, "Reads (transitive): {}", list(fp.map_or_else(Vec::new, |p| p.reads.iter().map(|v| v.to_string()).collect())));
    let _ = writeln!(out, "Writes (transitive): {}", list(fp.map_or_else(Vec::new, |p| p.writes.iter().map(|v| v.to_string()).collect())));
    let calls: Vec<String> = r
        .call_sites
        .iter()
        .map(|c| format!("{}.{} (line {})", c.target.name, c.method, c.line))
        .chain(r.low_level_calls.iter().map(|c| format!("{}.{} (line {})", c.receiver, c.kind, c.line)))
        .collect();
    let _ = writeln!(out, "External calls: {}", list(calls));
    let _ = writeln!(out, "Moves funds: {}", ccim.footprints.fund(&f));
    let _ = writeln!(out, "Admin-only: {}", ccim.is_admin(&f));
    let _ = writeln!(out, "Span: lines {}-{}", r.src.0, r.src.1);
    out
}

/// Source excerpt handed to a verifier, plus the raw text it quotes from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceBlock {
    pub text: String,
    pub functions: Vec<FnRef>,
    plain: String,
}

impl SourceBlock {
    /// Is `quote` (whitespace-normalized, line-number prefixes stripped) a
    /// substring of the supplied source?
    pub fn contains_quote(&self, quote: &str) -> bool {
        let q: String = quote
            .lines()
            .map(|l| {
                let t = l.trim_start();
                match t.split_once('|') {
                    Some((n, rest)) if !n.trim().is_empty() && n.trim().chars().all(|c| c.is_ascii_digit()) => rest,
                    _ => t,
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        let q = normalize_ws(&q);
        q.chars().filter(|c| !c.is_whitespace()).count() >= 5 && self.plain.contains(&q)
    }
}

/// Functions named by a finding: affected functions first, then records
/// whose name appears as a word in its text.
pub fn mentioned_functions(f: &Finding, ccim: &CcimModel) -> Vec<FnRef> {
    let mut out: Vec<FnRef> = f
        .affected_functions
        .iter()
        .filter(|g| ccim.record(g).is_some())
        .cloned()
        .collect();
    let text = format!("{}\n{}\n{}\n{}", f.title, f.description, f.attack_scenario, f.proof_trace);
    for r in &ccim.records {
        let g = r.fn_ref();
        if r.name.len() >= 3 && !out.contains(&g) && contains_word(&text, &r.name) {
            out.push(g);
        }
    }
    out
}

/// Callers and callees over the cross-contract graph and internal calls.
pub fn neighbours(ccim: &CcimModel, f: &FnRef) -> BTreeSet<FnRef> {
    let mut out: BTreeSet<FnRef> = ccim.graph.callees_of(f).chain(ccim.graph.callers_of(f)).cloned().collect();
    if let Some(r) = ccim.record(f) {
        out.extend(r.internal_calls.iter().filter(|g| ccim.record(g).is_some()).cloned());
    }
    out.extend(ccim.records.iter().filter(|r| r.internal_calls.contains(f)).map(FunctionRecord::fn_ref));
    out.remove(f);
    out
}

/// Mentioned functions expanded by one call-graph hop, capped at `budget`
/// characters.
pub fn source_block(ccim: &CcimModel, seeds: &[FnRef], budget: usize) -> SourceBlock {
    let mut order: Vec<FnRef> = Vec::new();
    for s in seeds {
        if !order.contains(s) {
            order.push(s.clone());
        }
    }
    for s in seeds {
        for n in neighbours(ccim, s) {
            if !order.contains(&n) {
                order.push(n);
            }
        }
    }
    let mut block = SourceBlock::default();
    let mut plain = Vec::new();
    for g in order {
        let Some(r) = ccim.record(&g) else { continue };
        let chunk = format!("// {g}\n{}\n", numbered(r));
        let used = block.text.chars().count();
        if used >= budget {
            break;
        }
        let room = budget - used;
        if chunk.chars().count() > room {
            let cut: String = chunk.chars().take(room).collect();
            let keep_lines = cut.lines().count().saturating_sub(1);
            plain.extend(r.body.lines().take(keep_lines.saturating_sub(1)).map(str::to_string));
            block.text.push_str(&cut);
            block.functions.push(g);
            break;
        }
        plain.extend(r.body.lines().map(str::to_string));
        block.text.push_str(&chunk);
        block.functions.push(g);
    }
    block.plain = normalize_ws(&plain.join(" "));
    block
}

/// Access-control evidence bundle for severity recalibration.
pub fn access_bundle(f: &Finding, ccim: &CcimModel) -> String {
    let mut out = String::new();
    for g in &f.affected_functions {
        let Some(r) = ccim.record(g) else {
            let _ = writeln!(out, "- {g}: not present in the parsed model");
            continue;
        };
        let mods: Vec<&str> = r.modifiers.iter().map(|m| m.name.as_str()).collect();
        let reqs: Vec<&str> = r.requires.iter().map(|g| g.expr.as_str()).collect();
        let writes: Vec<String> = r.writes.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "- {g}: visibility {:?}; modifiers [{}]; requires [{}]; writes [{}]; admin-only {}; moves funds {}",
            r.vis,
            mods.join(", "),
            reqs.join("; "),
            writes.join(", "),
            ccim.is_admin(g),
            ccim.footprints.fund(g)
        );
    }
    let admins: Vec<String> = ccim.admin_set.iter().map(|g| g.to_string()).collect();
    let role_mods: BTreeSet<&str> = ccim
        .records
        .iter()
        .filter(|r| ccim.is_admin(&r.fn_ref()))
        .flat_map(|r| r.modifiers.iter().map(|m| m.name.as_str()))
        .collect();
    let _ = writeln!(out, "Role hierarchy: admin functions [{}]; modifiers on admin paths [{}]", admins.join(", "), role_mods.into_iter().collect::<Vec<_>>().join(", "));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::AuditSource;

    const SRC: &str = "contract V {\n    mapping(address => uint) bal;\n    function withdraw() external nonReentrant {\n        _pay(msg.sender);\n    }\n    function _pay(address to) internal {\n        bal[to] = 0;\n    }\n}\n";

    #[test]
    fn block_expands_and_quotes() {
        let m = crate::ccim::build(&AuditSource::single("V.sol", SRC));
        let b = source_block(&m, &[FnRef::new("V", "withdraw")], 10_000);
        assert_eq!(b.functions, vec![FnRef::new("V", "withdraw"), FnRef::new("V", "_pay")]);
        assert!(b.contains_quote("function withdraw() external nonReentrant {"));
        assert!(b.contains_quote("    3 | function withdraw()  external nonReentrant"));
        assert!(!b.contains_quote("require(msg.sender == owner)"));
        assert!(!b.contains_quote("{"));
        let small = source_block(&m, &[FnRef::new("V", "withdraw")], 40);
        assert!(small.text.chars().count() <= 40);
    }
}
