//! Boundary and value analysis: eight sub-analyzers over value flows,
//! numeric guards and arithmetic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::code::{self, Stmt};
use super::{guarded, Engine, Signal};
use crate::ccim::{parser, CcimModel, ContractInfo, FlowKind, FunctionKind, FunctionRecord, GuardKind, UpdateKind};
use crate::expr::{self, BinOp, Comparison};
use crate::ingest::AuditSource;
use crate::types::{is_counter_pair, FnRef, Severity, VarId};

type SubAnalyzer = fn(&CcimModel) -> Vec<Signal>;

const SUB_ANALYZERS: [(&str, SubAnalyzer); 8] = [
    ("value-flow", value_flows),
    ("boundary", boundaries),
    ("rationality", rationality),
    ("locked-eth", locked_eth),
    ("read-before-write", read_before_write),
    ("formula-mismatch", formula_mismatch),
    ("literal-arith", literal_arith),
    ("invariant", invariant_consistency),
];

pub fn run_bva(ccim: &CcimModel, _source: &AuditSource) -> Vec<Signal> {
    SUB_ANALYZERS
        .iter()
        .flat_map(|(name, f)| guarded(&format!("BVA {name}"), || f(ccim)))
        .collect()
}

fn sig(rule: &str, subject: impl std::fmt::Display, sev: Severity, conf: f64, desc: String) -> Signal {
    Signal::new(Engine::Bva, rule, subject, sev, conf, desc)
}

fn entry_functions(ccim: &CcimModel) -> impl Iterator<Item = &FunctionRecord> {
    ccim.records
        .iter()
        .filter(|r| r.vis.is_entry() && r.kind != FunctionKind::Constructor)
}

/// Numeric comparisons of the non-access preconditions of `r`.
pub fn numeric_guards(r: &FunctionRecord) -> Vec<(Comparison, usize)> {
    r.requires
        .iter()
        .filter(|g| matches!(g.kind, GuardKind::Require | GuardKind::IfRevert))
        .filter(|g| !parser::is_access_expr(&g.expr))
        .filter_map(|g| expr::parse_expr(&g.expr).map(|e| (e, g.line)))
        .flat_map(|(e, line)| {
            expr::conjuncts(&e)
                .into_iter()
                .filter_map(expr::comparison)
                .filter(|c| c.op.is_comparison() && !matches!(c.op, BinOp::Eq | BinOp::Ne))
                .map(|c| (c, line))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// (i) value leaving the contract with neither a precondition nor any
/// caller-keyed accounting.
fn value_flows(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in entry_functions(ccim) {
        if r.value_flows.is_empty() || ccim.is_admin(&r.fn_ref()) {
            continue;
        }
        if !r.requires.is_empty() || !r.modifiers.is_empty() || !r.guards.is_empty() {
            continue;
        }
        let reach = code::reachable(ccim, r);
        if reach.iter().any(|x| x.body.contains("[msg.sender]") || x.body.contains("[_msgSender()]")) {
            continue;
        }
        let flow = &r.value_flows[0];
        let kind = match flow.kind {
            FlowKind::Native => "ether",
            FlowKind::Token => "tokens",
        };
        out.push(
            sig(
                "BVA-VALUE-FLOW",
                format!("{}:{}", r.fn_ref(), flow.line),
                Severity::Medium,
                0.5,
                format!(
                    "{} sends {kind} via `{}` with no precondition and no caller-keyed accounting",
                    r.fn_ref(),
                    flow.method
                ),
            )
            .on(r.fn_ref())
            .at(flow.line),
        );
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Lower,
    Upper,
}

/// (ii) the same symbolic bound compared with differing strictness.
fn boundaries(ccim: &CcimModel) -> Vec<Signal> {
    // (bound, side) -> strict -> [(fn, line, op)]
    let mut by_bound: BTreeMap<(String, Side), BTreeMap<bool, Vec<(FnRef, usize, BinOp)>>> = BTreeMap::new();
    for r in &ccim.records {
        for (c, line) in numeric_guards(r) {
            if c.literal_bound().is_some() {
                continue;
            }
            let (side, strict) = match c.op {
                BinOp::Gt => (Side::Lower, true),
                BinOp::Ge => (Side::Lower, false),
                BinOp::Lt => (Side::Upper, true),
                BinOp::Le => (Side::Upper, false),
                _ => continue,
            };
            by_bound
                .entry((c.bound.to_string(), side))
                .or_default()
                .entry(strict)
                .or_default()
                .push((r.fn_ref(), line, c.op));
        }
    }
    let mut out = Vec::new();
    for ((bound, _), groups) in by_bound {
        let (Some(strict), Some(loose)) = (groups.get(&true), groups.get(&false)) else { continue };
        let fns_strict: BTreeSet<&FnRef> = strict.iter().map(|x| &x.0).collect();
        let fns_loose: BTreeSet<&FnRef> = loose.iter().map(|x| &x.0).collect();
        if fns_strict == fns_loose && fns_strict.len() == 1 {
            continue;
        }
        let minority = if loose.len() < strict.len() { loose } else { strict };
        let majority = if std::ptr::eq(minority, loose) { strict } else { loose };
        let (f, line, op) = &minority[0];
        let (g, _, op2) = &majority[0];
        out.push(
            sig(
                "BVA-BOUNDARY",
                format!("{f}:{line}"),
                Severity::Low,
                0.4,
                format!(
                    "{f} compares against `{bound}` with `{}` while {g} uses `{}`",
                    op.symbol(),
                    op2.symbol()
                ),
            )
            .on(f.clone())
            .at(*line),
        );
    }
    out
}

fn unsigned_param(r: &FunctionRecord, name: &str) -> bool {
    r.params.iter().any(|p| p.name == name && p.ty.starts_with("uint"))
}

/// (iii) unsatisfiable or vacuous literal bounds.
fn rationality(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        let guards = numeric_guards(r);
        let mut by_subject: BTreeMap<&str, Vec<(&Comparison, usize)>> = BTreeMap::new();
        for (c, line) in &guards {
            if c.literal_bound().is_some() {
                by_subject.entry(c.subject.as_str()).or_default().push((c, *line));
            }
        }
        for (subject, cmps) in by_subject {
            let only: Vec<&Comparison> = cmps.iter().map(|x| x.0).collect();
            let line = cmps.iter().map(|x| x.1).max().unwrap_or(r.src.0);
            let unsigned = unsigned_param(r, subject);
            let empty = match expr::interval(&only) {
                None => true,
                Some((_, hi)) => unsigned && hi < 0,
            };
            if empty {
                out.push(
                    sig(
                        "BVA-RATIONALITY",
                        format!("{}:{subject}", r.fn_ref()),
                        Severity::Medium,
                        0.6,
                        format!("bounds on `{subject}` in {} admit no value; the path is unreachable", r.fn_ref()),
                    )
                    .on(r.fn_ref())
                    .at(line),
                );
            } else if unsigned {
                if let Some((c, l)) = cmps
                    .iter()
                    .find(|(c, _)| c.op == BinOp::Ge && c.literal_bound() == Some(0))
                {
                    out.push(
                        sig(
                            "BVA-VACUOUS-BOUND",
                            format!("{}:{subject}", r.fn_ref()),
                            Severity::Low,
                            0.4,
                            format!(
                                "`{subject} {} 0` in {} always holds for an unsigned value",
                                c.op.symbol(),
                                r.fn_ref()
                            ),
                        )
                        .on(r.fn_ref())
                        .at(*l),
                    );
                }
            }
        }
    }
    out
}

fn lineage(ccim: &CcimModel, c: &ContractInfo) -> Vec<String> {
    let by_name: HashMap<&str, &ContractInfo> = ccim.contracts.iter().map(|c| (c.name.as_str(), c)).collect();
    parser::linearize(&c.name, &by_name)
}

/// (iv) payable entry without any path that moves ether out.
fn locked_eth(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for c in ccim.in_scope_contracts().filter(|c| c.kind.is_concrete()) {
        let lin = lineage(ccim, c);
        let recs: Vec<&FunctionRecord> = ccim.records.iter().filter(|r| lin.contains(&r.owner)).collect();
        let Some(payable) = recs
            .iter()
            .filter(|r| r.mutability == crate::ccim::Mutability::Payable)
            .min_by_key(|r| (r.kind != FunctionKind::Receive, r.src.0))
        else {
            continue;
        };
        let escapes = recs.iter().any(|r| {
            r.value_flows.iter().any(|f| f.kind == FlowKind::Native)
                || r.low_level_calls
                    .iter()
                    .any(|l| l.with_value || l.kind == "delegatecall")
                || r.assembly.iter().any(|a| a.text.contains("call(") || a.text.contains("selfdestruct"))
        });
        if escapes {
            continue;
        }
        out.push(
            sig(
                "BVA-LOCKED-ETH",
                &c.name,
                Severity::Medium,
                0.7,
                format!(
                    "{} accepts ether through {} but has no path that sends ether out",
                    c.name,
                    payable.fn_ref()
                ),
            )
            .on(payable.fn_ref())
            .at(payable.src.0)
            .about(c.name.clone()),
        );
    }
    out
}

/// (v) storage read somewhere but never assigned anywhere.
fn read_before_write(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for c in ccim.in_scope_contracts() {
        for v in &c.state_vars {
            if v.constant || v.immutable || v.initialized {
                continue;
            }
            let id = VarId::new(&c.name, &v.name);
            if ccim.deps.writers_of(&id).next().is_some() {
                continue;
            }
            let Some(reader) = ccim.deps.readers_of(&id).next() else { continue };
            out.push(
                sig(
                    "BVA-READ-BEFORE-WRITE",
                    &id,
                    Severity::Medium,
                    0.5,
                    format!("`{id}` is read by {reader} but never assigned; it always holds its default value"),
                )
                .on(reader.clone())
                .at(v.line)
                .about(id.to_string()),
            );
        }
    }
    out
}

struct Formula {
    line: usize,
    seq: Vec<BinOp>,
    factors: Vec<(String, bool)>,
    text: String,
}

fn formulas(r: &FunctionRecord) -> Vec<Formula> {
    let params = code::param_names(r);
    code::statements(r)
        .iter()
        .flat_map(|s: &Stmt| {
            s.expressions()
                .iter()
                .flat_map(|e| {
                    code::arith_terms(e)
                        .into_iter()
                        .map(|t| Formula {
                            line: s.line,
                            seq: expr::muldiv_sequence(t),
                            factors: expr::factor_roles(t)
                                .into_iter()
                                .filter(|(n, _)| !params.contains(n.as_str()))
                                .collect(),
                            text: t.to_string(),
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .filter(|f| f.seq.contains(&BinOp::Mul) && f.seq.contains(&BinOp::Div))
        .collect()
}

/// (vi) counter-pair conversions sharing a factor but ordering `*` and `/`
/// differently.
fn formula_mismatch(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for (i, f) in ccim.records.iter().enumerate() {
        for g in ccim.records.iter().skip(i + 1) {
            if f.owner != g.owner || !is_counter_pair(&f.name, &g.name) {
                continue;
            }
            let (ff, gf) = (formulas(f), formulas(g));
            let hit = ff.iter().find_map(|a| {
                gf.iter().find_map(|b| {
                    let shared = a
                        .factors
                        .iter()
                        .find(|(x, _)| b.factors.iter().any(|(y, _)| x == y))?;
                    (a.seq != b.seq).then(|| (a, b, shared.0.clone()))
                })
            });
            if let Some((a, b, factor)) = hit {
                out.push(
                    sig(
                        "BVA-FORMULA-MISMATCH",
                        format!("{}+{}", f.fn_ref(), g.name),
                        Severity::High,
                        0.6,
                        format!(
                            "{} computes `{}` but {} computes `{}`; `{factor}` is scaled in a different order",
                            f.fn_ref(),
                            a.text,
                            g.fn_ref(),
                            b.text
                        ),
                    )
                    .on(f.fn_ref())
                    .at(a.line),
                );
            }
        }
    }
    out
}

/// (vii) constant folding of literal operands.
fn literal_arith(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for r in &ccim.records {
        for s in code::statements(r) {
            for e in s.expressions() {
                for (num, den) in expr::literal_divisions(&e) {
                    let (rule, sev, desc) = if den == 0 {
                        ("BVA-LITERAL-DIV-ZERO", Severity::High, format!("division by literal zero in `{}`", s.text))
                    } else if let Some(n) = num.filter(|&n| n != 0 && n.abs() < den.abs()) {
                        (
                            "BVA-LITERAL-TRUNCATION",
                            Severity::Medium,
                            format!("`{n} / {den}` truncates to zero in `{}`", s.text),
                        )
                    } else {
                        continue;
                    };
                    out.push(
                        sig(rule, format!("{}:{}", r.fn_ref(), s.line), sev, 0.7, desc)
                            .on(r.fn_ref())
                            .at(s.line),
                    );
                }
            }
        }
    }
    out.dedup_by(|a, b| a.id == b.id);
    out
}

fn directions(r: &FunctionRecord) -> BTreeMap<&VarId, (i8, usize)> {
    let mut seen: BTreeMap<&VarId, BTreeSet<i8>> = BTreeMap::new();
    let mut line: BTreeMap<&VarId, usize> = BTreeMap::new();
    for u in &r.updates {
        let d = match u.kind {
            UpdateKind::Add => 1,
            UpdateKind::Sub => -1,
            _ => 0,
        };
        seen.entry(&u.var).or_default().insert(d);
        line.entry(&u.var).or_insert(u.line);
    }
    seen.into_iter()
        .filter(|(_, d)| d.len() == 1 && !d.contains(&0))
        .map(|(v, d)| (v, (*d.iter().next().unwrap(), line[v])))
        .collect()
}

/// (viii) paired counters whose relative direction differs across
/// functions.
fn invariant_consistency(ccim: &CcimModel) -> Vec<Signal> {
    // (a, b) -> relation -> [(fn, line)]
    let mut rel: BTreeMap<(&VarId, &VarId), BTreeMap<bool, Vec<(FnRef, usize)>>> = BTreeMap::new();
    for r in &ccim.records {
        let d = directions(r);
        let vars: Vec<_> = d.keys().copied().collect();
        for (i, a) in vars.iter().enumerate() {
            for b in &vars[i + 1..] {
                let same = d[a].0 == d[b].0;
                let line = d[a].1.max(d[b].1);
                rel.entry((a, b)).or_default().entry(same).or_default().push((r.fn_ref(), line));
            }
        }
    }
    let mut out = Vec::new();
    for ((a, b), groups) in rel {
        let (Some(same), Some(opp)) = (groups.get(&true), groups.get(&false)) else { continue };
        let deviants: &Vec<(FnRef, usize)> = if opp.len() <= same.len() { opp } else { same };
        let reference = if std::ptr::eq(deviants, opp) { &same[0].0 } else { &opp[0].0 };
        for (f, line) in deviants {
            out.push(
                sig(
                    "BVA-INVARIANT",
                    format!("{f}:{}+{}", a.name, b.name),
                    Severity::Medium,
                    0.5,
                    format!(
                        "{f} moves `{a}` and `{b}` in a direction inconsistent with {reference}"
                    ),
                )
                .on(f.clone())
                .at(*line),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccim;

    fn run(src: &str) -> Vec<Signal> {
        let s = AuditSource::single("T.sol", src);
        run_bva(&ccim::build(&s), &s)
    }

    fn rules(v: &[Signal]) -> Vec<&str> {
        v.iter().map(|s| s.rule()).collect()
    }

    #[test]
    fn locked_eth_only_without_escape() {
        let locked = run("contract L {\n    uint n;\n    receive() external payable {}\n    function bump() external { n += 1; }\n}\n");
        assert_eq!(rules(&locked), vec!["BVA-LOCKED-ETH"]);
        let free = run("contract F {\n    receive() external payable {}\n    function out() external { payable(msg.sender).transfer(address(this).balance); }\n}\n");
        assert!(!rules(&free).contains(&"BVA-LOCKED-ETH"));
    }

    #[test]
    fn nothing_to_analyze() {
        assert!(run("contract Z {\n    uint x;\n    function set(uint v) external { x = v; }\n    function get() external view returns (uint) { return x; }\n}\n").is_empty());
    }

    #[test]
    fn formula_mismatch_on_counter_pair() {
        let src = "contract V {\n    uint price;\n    mapping(address => uint) bal;\n    function setPrice(uint p) external { price = p; }\n    function deposit(uint amount) external {\n        uint s = amount * price / 1e18;\n        bal[msg.sender] += s;\n    }\n    function withdraw(uint amount) external {\n        uint a = amount / price * 1e18;\n        bal[msg.sender] -= a;\n    }\n}\n";
        let got = run(src);
        let fm: Vec<_> = got.iter().filter(|s| s.rule() == "BVA-FORMULA-MISMATCH").collect();
        assert_eq!(fm.len(), 1);
        assert_eq!(fm[0].function.as_ref().unwrap().name, "deposit");
    }

    #[test]
    fn unsatisfiable_bounds_and_truncation() {
        let got = run("contract R {\n    uint x;\n    function f(uint a) external {\n        require(a > 10);\n        require(a < 5);\n        x = a + 1 / 3;\n    }\n}\n");
        let r = rules(&got);
        assert!(r.contains(&"BVA-RATIONALITY"));
        assert!(r.contains(&"BVA-LITERAL-TRUNCATION"));
    }

    #[test]
    fn boundary_strictness_and_read_before_write() {
        let got = run("contract B {\n    uint minAmt;\n    uint t;\n    function a(uint v) external { require(v >= minAmt); t += v; }\n    function b(uint v) external { require(v > minAmt); t -= v; }\n    function c(uint v) external { require(v >= minAmt); t = v; }\n}\n");
        let b: Vec<_> = got.iter().filter(|s| s.rule() == "BVA-BOUNDARY").collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].function.as_ref().unwrap().name, "b");
        assert!(rules(&got).contains(&"BVA-READ-BEFORE-WRITE"));
    }

    #[test]
    fn invariant_direction_deviant() {
        let src = "contract I {\n    mapping(address => uint) bal;\n    uint total;\n    function mint(uint a) external { bal[msg.sender] += a; total += a; }\n    function burn(uint a) external { bal[msg.sender] -= a; total -= a; }\n    function bad(uint a) external { bal[msg.sender] -= a; total += a; }\n}\n";
        let got = run(src);
        let inv: Vec<_> = got.iter().filter(|s| s.rule() == "BVA-INVARIANT").collect();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv[0].function.as_ref().unwrap().name, "bad");
    }
}
