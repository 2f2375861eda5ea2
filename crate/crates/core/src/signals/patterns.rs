//! Textual and structural rule catalogue: oracle, signature, arithmetic,
//! assembly and time-unit pitfalls.

use std::sync::LazyLock;

use regex::Regex;

use super::code;
use super::{guarded, Engine, Signal};
use crate::ccim::{CcimModel, FunctionRecord};
use crate::expr;
use crate::ingest::AuditSource;
use crate::lexer;
use crate::types::{FnRef, Severity};

type Rule = fn(&CcimModel) -> Vec<Signal>;

/// Every shipped rule, in evaluation order.
pub const RULES: [(&str, Rule); 10] = [
    ("oracle-staleness", oracle_staleness),
    ("div-before-mul", div_before_mul),
    ("unsafe-downcast", unsafe_downcast),
    ("signature-replay", signature_replay),
    ("signature-deadline", signature_deadline),
    ("unchecked-arith", unchecked_arith),
    ("asm-delegatecall", asm_delegatecall),
    ("asm-returndata", asm_returndata),
    ("time-unit-mismatch", time_unit_mismatch),
    ("tx-origin", tx_origin),
];

pub fn run_pattern_detectors(ccim: &CcimModel, _source: &AuditSource) -> Vec<Signal> {
    RULES
        .iter()
        .flat_map(|(name, rule)| guarded(&format!("pattern rule {name}"), || rule(ccim)))
        .collect()
}

fn hit(tag: Engine, rule: &str, r: &FunctionRecord, line: usize, sev: Severity, conf: f64, desc: String) -> Signal {
    Signal::new(tag, rule, format!("{}:{line}", r.fn_ref()), sev, conf, desc)
        .on(r.fn_ref())
        .at(line)
}

fn masked(r: &FunctionRecord) -> String {
    lexer::mask(&r.body)
}

/// Concatenation line of a byte offset into the record body.
fn line_in(r: &FunctionRecord, body: &str, off: usize) -> usize {
    r.src.0 + body[..off].matches('\n').count()
}

fn oracle_staleness(ccim: &CcimModel) -> Vec<Signal> {
    static FRESH: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)updatedAt|answeredInRound|block\.timestamp|stale|heartbeat").unwrap());
    let mut out = Vec::new();
    for r in &ccim.records {
        let body = masked(r);
        if let Some(off) = body.find("latestAnswer(") {
            out.push(hit(
                Engine::Custom,
                "CUSTOM-ORACLE-STALE",
                r,
                line_in(r, &body, off),
                Severity::Medium,
                0.6,
                format!("{} reads `latestAnswer()`, which carries no freshness data", r.fn_ref()),
            ));
        } else if let Some(off) = body.find("latestRoundData(") {
            let checked = r.requires.iter().any(|g| FRESH.is_match(&g.expr));
            if !checked {
                out.push(hit(
                    Engine::Custom,
                    "CUSTOM-ORACLE-STALE",
                    r,
                    line_in(r, &body, off),
                    Severity::Medium,
                    0.6,
                    format!("{} uses `latestRoundData()` without checking `updatedAt`", r.fn_ref()),
                ));
            }
        }
    }
    out
}

fn div_before_mul(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for s in code::statements(r) {
            if s.expressions().iter().any(expr::has_div_before_mul) {
                out.push(hit(
                    Engine::Math,
                    "MATH-DIV-BEFORE-MUL",
                    r,
                    s.line,
                    Severity::Medium,
                    0.6,
                    format!("division before multiplication loses precision in `{}`", s.text),
                ));
            }
        }
    }
    out.dedup_by(|a, b| a.id == b.id);
    out
}

fn unsafe_downcast(ccim: &CcimModel) -> Vec<Signal> {
    static CAST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(u?int)(\d+)\s*\(").unwrap());
    let mut out = Vec::new();
    for r in &ccim.records {
        let body = masked(r);
        if body.contains("SafeCast") || body.contains(".toUint") || body.contains(".toInt") {
            continue;
        }
        for m in CAST.captures_iter(&body) {
            let bits: u32 = m[2].parse().unwrap_or(256);
            if bits >= 256 {
                continue;
            }
            let whole = m.get(0).unwrap();
            let open = whole.end() - 1;
            let Some(close) = lexer::matching(body.as_bytes(), open) else { continue };
            let arg = body[open + 1..close].trim();
            if arg.is_empty() || expr::parse_expr(arg).and_then(|e| expr::eval(&e)).is_some() {
                continue;
            }
            // `type(uint128).max` and friends are not conversions.
            if body[..whole.start()].trim_end().ends_with("type(") {
                continue;
            }
            let line = line_in(r, &body, whole.start());
            out.push(hit(
                Engine::Math,
                "MATH-UNSAFE-DOWNCAST",
                r,
                line,
                Severity::Medium,
                0.5,
                format!("`{}{bits}({arg})` truncates silently when the value does not fit", &m[1]),
            ));
        }
    }
    out.dedup_by(|a, b| a.id == b.id);
    out
}

static SIG_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\becrecover\s*\(|\.recover\s*\(|\.tryRecover\s*\(|\bisValidSignatureNow\s*\(").unwrap()
});

fn sig_site(r: &FunctionRecord) -> Option<(usize, bool)> {
    let body = masked(r);
    let m = SIG_RE.find(&body)?;
    Some((line_in(r, &body, m.start()), m.as_str().starts_with("ecrecover")))
}

fn signature_replay(ccim: &CcimModel) -> Vec<Signal> {
    static CONSUME: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)nonce|used|executed|consumed|claimed|processed|redeemed|spent").unwrap());
    let mut out = Vec::new();
    for r in &ccim.records {
        let Some((line, raw)) = sig_site(r) else { continue };
        let consumes = code::reachable(ccim, r)
            .iter()
            .any(|x| x.updates.iter().any(|u| CONSUME.is_match(&u.var.name)));
        if !consumes {
            out.push(hit(
                Engine::Sig,
                "SIG-REPLAY",
                r,
                line,
                Severity::High,
                0.6,
                format!("{} verifies a signature but consumes no nonce; the signature can be replayed", r.fn_ref()),
            ));
        }
        if raw && !masked(r).contains("address(0)") {
            out.push(hit(
                Engine::Sig,
                "SIG-ECRECOVER-ZERO",
                r,
                line,
                Severity::Low,
                0.4,
                format!("{} does not reject the zero address returned by `ecrecover` for invalid signatures", r.fn_ref()),
            ));
        }
    }
    out
}

fn signature_deadline(ccim: &CcimModel) -> Vec<Signal> {
    static TIME: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)deadline|expir|validUntil|validBefore|block\.timestamp").unwrap());
    let mut out = Vec::new();
    for r in &ccim.records {
        let Some((line, _)) = sig_site(r) else { continue };
        if !code::reachable(ccim, r).iter().any(|x| x.requires.iter().any(|g| TIME.is_match(&g.expr))) {
            out.push(hit(
                Engine::Sig,
                "SIG-NO-DEADLINE",
                r,
                line,
                Severity::Medium,
                0.5,
                format!("signatures accepted by {} never expire", r.fn_ref()),
            ));
        }
    }
    out
}

fn unchecked_arith(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for &(s, e) in &r.unchecked {
            let text = lexer::mask(&code::body_lines(r, s, e));
            let inner = text.split_once("unchecked").map_or(text.as_str(), |x| x.1);
            let stripped = inner.replace("++", "").replace("--", "");
            if stripped.contains(['+', '-', '*']) {
                out.push(hit(
                    Engine::Math,
                    "MATH-UNCHECKED",
                    r,
                    s,
                    Severity::Medium,
                    0.4,
                    format!("{} performs arithmetic inside `unchecked` without overflow protection", r.fn_ref()),
                ));
            }
        }
    }
    out
}

fn asm_delegatecall(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for a in r.assembly.iter().filter(|a| a.text.contains("delegatecall(")) {
            out.push(hit(
                Engine::Asm,
                "ASM-DELEGATECALL",
                r,
                a.line,
                Severity::High,
                0.6,
                format!("{} issues `delegatecall` from inline assembly", r.fn_ref()),
            ));
        }
    }
    out
}

fn asm_returndata(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for a in r
            .assembly
            .iter()
            .filter(|a| a.text.contains("returndatacopy(") || a.text.contains("returndatasize()"))
        {
            out.push(hit(
                Engine::Asm,
                "ASM-RETURNDATA",
                r,
                a.line,
                Severity::Medium,
                0.4,
                format!("{} copies raw returndata in assembly; size and revert data must be validated", r.fn_ref()),
            ));
        }
    }
    out
}

fn time_named(id: &str) -> bool {
    let l = id.to_ascii_lowercase();
    ["time", "deadline", "expir", "duration", "delay", "until"].iter().any(|k| l.contains(k))
}

fn block_named(id: &str) -> bool {
    let l = id.to_ascii_lowercase();
    l != "block" && (l.contains("blocknumber") || l.contains("blockheight") || l.ends_with("block") || l.ends_with("blocks"))
}

fn time_unit_mismatch(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for s in code::statements(r) {
            let t = &s.text;
            let ids: Vec<&str> = lexer::identifiers(t).iter().map(|i| i.text).collect();
            let compares = s.assignment().is_some() || t.contains('<') || t.contains('>') || t.contains("==");
            if !compares {
                continue;
            }
            let mismatch = if t.contains("block.number") {
                ids.iter().find(|i| time_named(i)).map(|i| (*i, "block.number"))
            } else if t.contains("block.timestamp") {
                ids.iter().find(|i| block_named(i)).map(|i| (*i, "block.timestamp"))
            } else {
                None
            };
            if let Some((name, src)) = mismatch {
                out.push(hit(
                    Engine::Ccpti,
                    "CCPTI-TIME-UNIT",
                    r,
                    s.line,
                    Severity::Medium,
                    0.5,
                    format!("`{name}` is combined with `{src}` in `{t}`; block numbers and timestamps are different units"),
                ));
            }
        }
        for ic in &r.internal_call_sites {
            let Some(callee) = ccim.record(&ic.callee) else { continue };
            for (arg, p) in ic.args.iter().zip(&callee.params) {
                let arg_time = arg.contains("block.timestamp") || lexer::identifiers(arg).iter().any(|i| time_named(i.text));
                let arg_block = arg.contains("block.number") || lexer::identifiers(arg).iter().any(|i| block_named(i.text));
                if (arg_time && block_named(&p.name)) || (arg_block && time_named(&p.name)) {
                    out.push(hit(
                        Engine::Ccpti,
                        "CCPTI-TIME-UNIT",
                        r,
                        ic.line,
                        Severity::Medium,
                        0.5,
                        format!("`{arg}` is passed as `{}` of {}", p.name, FnRef::new(&callee.owner, &callee.name)),
                    ));
                }
            }
        }
    }
    out.dedup_by(|a, b| a.id == b.id);
    out
}

fn tx_origin(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        if let Some(g) = r.requires.iter().find(|g| g.expr.contains("tx.origin")) {
            out.push(hit(
                Engine::Custom,
                "CUSTOM-TX-ORIGIN",
                r,
                g.line,
                Severity::Medium,
                0.6,
                format!("{} authorizes with `tx.origin`, which any intermediate contract can borrow", r.fn_ref()),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccim;

    fn rules_of(src: &str) -> Vec<String> {
        let s = AuditSource::single("T.sol", src);
        run_pattern_detectors(&ccim::build(&s), &s)
            .iter()
            .map(|x| x.rule().to_string())
            .collect()
    }

    #[test]
    fn div_before_mul_detected() {
        let r = rules_of("contract M {\n    uint x;\n    function f(uint a, uint b, uint c) external { x = a / b * c; }\n}\n");
        assert_eq!(r, vec!["MATH-DIV-BEFORE-MUL"]);
    }

    #[test]
    fn ecrecover_without_nonce_is_replayable() {
        let src = "contract S {\n    address signer;\n    uint paid;\n    function claim(bytes32 h, uint8 v, bytes32 r, bytes32 s) external {\n        require(ecrecover(h, v, r, s) == signer);\n        paid += 1;\n    }\n}\n";
        let r = rules_of(src);
        assert!(r.contains(&"SIG-REPLAY".to_string()));
        let fixed = src.replace("paid += 1;", "paid += 1;\n        nonces[msg.sender]++;").replace("uint paid;", "uint paid;\n    mapping(address => uint) nonces;");
        assert!(!rules_of(&fixed).contains(&"SIG-REPLAY".to_string()));
    }

    #[test]
    fn downcast_unchecked_and_assembly() {
        let src = "contract D {\n    uint128 small;\n    function f(uint v) external {\n        small = uint128(v);\n        unchecked { small += 1; }\n        assembly { let ok := delegatecall(gas(), 0, 0, 0, 0, 0) returndatacopy(0, 0, returndatasize()) }\n    }\n}\n";
        let r = rules_of(src);
        for want in ["MATH-UNSAFE-DOWNCAST", "MATH-UNCHECKED", "ASM-DELEGATECALL", "ASM-RETURNDATA"] {
            assert!(r.contains(&want.to_string()), "{want} missing from {r:?}");
        }
    }

    #[test]
    fn oracle_and_time_units() {
        let src = "interface AggregatorV3 { function latestRoundData() external view returns (uint80, int256, uint256, uint256, uint80); }\ncontract O {\n    AggregatorV3 feed;\n    uint unlockTime;\n    function p() external view returns (int256) {\n        (, int256 a, , , ) = feed.latestRoundData();\n        return a;\n    }\n    function open() external view returns (bool) { return block.number > unlockTime; }\n}\n";
        let r = rules_of(src);
        assert!(r.contains(&"CUSTOM-ORACLE-STALE".to_string()));
        assert!(r.contains(&"CCPTI-TIME-UNIT".to_string()));
    }
}
