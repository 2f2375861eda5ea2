//! The interaction-driven pipeline.
//!
//! Function pairs are nominated by deterministic heuristics, a behavioral
//! spec is inferred for each pair from the interface skeleton alone, and the
//! implementation is then checked against that spec with a seven-point
//! checklist. High-risk functions get a standalone slot. A deterministic
//! cleanup (self-contradiction filter, six recalibration rules) closes the
//! pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibration::{self, FilterOutcome, RuleApplication};
use crate::ccim::{CcimModel, FunctionKind, FunctionRecord};
use crate::config::PipelineConfig;
use crate::dd::{ask_findings, PipelineContext};
use crate::evidence;
use crate::finding::{self, Finding};
use crate::prompts;
use crate::reasoner::{ask, schema, stage, Reasoner, ReasonerRequest};
use crate::signals::{itpc, MergedSignals};
use crate::types::{is_counter_pair, FnRef, Pipeline, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairSource {
    Hotspot,
    Counter,
    SharedState,
    Triage,
    LlmTriage,
}

impl PairSource {
    pub fn confidence(self, cfg: &PipelineConfig) -> f64 {
        let c = &cfg.pair_confidences;
        match self {
            PairSource::Hotspot => c.hotspot,
            PairSource::Counter => c.counter,
            PairSource::SharedState => c.shared_state,
            PairSource::Triage => c.triage,
            PairSource::LlmTriage => c.llm_triage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    /// Ordered so that `pair.0 < pair.1`.
    pub pair: (FnRef, FnRef),
    pub sources: BTreeSet<PairSource>,
    pub source_confidence: f64,
}

impl fmt::Display for PairCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.pair.0, self.pair.1)
    }
}

fn ordered(a: &FnRef, b: &FnRef) -> (FnRef, FnRef) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Sum of signal confidences over both functions plus 0.5 per variable
/// both write.
pub fn attention_score(ccim: &CcimModel, merged: &MergedSignals, f: &FnRef, g: &FnRef) -> f64 {
    let sig: f64 = merged.for_function(f).iter().chain(merged.for_function(g).iter()).map(|s| s.confidence).sum();
    let shared = match (ccim.footprints.get(f), ccim.footprints.get(g)) {
        (Some(a), Some(b)) => a.writes.intersection(&b.writes).count(),
        _ => 0,
    };
    sig + 0.5 * shared as f64
}

fn entry_functions(ccim: &CcimModel) -> Vec<&FunctionRecord> {
    ccim.records
        .iter()
        .filter(|r| r.vis.is_entry() && r.kind != FunctionKind::Constructor)
        .collect()
}

fn interacts(ccim: &CcimModel, f: &FnRef, g: &FnRef) -> bool {
    let edge = ccim.graph.edges.contains(&(f.clone(), g.clone())) || ccim.graph.edges.contains(&(g.clone(), f.clone()));
    let storage = match (ccim.footprints.get(f), ccim.footprints.get(g)) {
        (Some(a), Some(b)) => {
            a.writes.iter().any(|v| b.reads.contains(v) || b.writes.contains(v))
                || b.writes.iter().any(|v| a.reads.contains(v))
        }
        _ => false,
    };
    edge || storage
}

fn shares_boundary(ccim: &CcimModel, a: &FunctionRecord, b: &FunctionRecord) -> bool {
    let params = |r: &FunctionRecord| -> BTreeSet<(String, String)> {
        r.params.iter().filter(|p| !p.name.is_empty()).map(|p| (p.ty.clone(), p.name.clone())).collect()
    };
    if !params(a).is_disjoint(&params(b)) {
        return true;
    }
    let reads = |r: &FunctionRecord| ccim.footprints.get(&r.fn_ref()).map(|p| p.reads.clone()).unwrap_or_default();
    if !reads(a).is_disjoint(&reads(b)) {
        return true;
    }
    let targets = |r: &FunctionRecord| -> BTreeSet<String> {
        r.call_sites
            .iter()
            .map(|c| ccim.resolution.resolve(&c.target).map_or_else(|| c.target.to_string(), str::to_string))
            .collect()
    };
    !targets(a).is_disjoint(&targets(b))
}

/// Pair nomination. `reasoner` enables the triage source for contracts
/// without CRITICAL or HIGH signals.
pub fn select_pairs(
    ccim: &CcimModel,
    merged: &MergedSignals,
    reasoner: Option<&dyn Reasoner>,
    cfg: &PipelineConfig,
) -> Vec<PairCandidate> {
    let mut nominated: BTreeMap<(FnRef, FnRef), BTreeSet<PairSource>> = BTreeMap::new();
    let mut add = |a: &FnRef, b: &FnRef, s: PairSource| {
        if a != b {
            nominated.entry(ordered(a, b)).or_default().insert(s);
        }
    };
    let entries = entry_functions(ccim);

    // (i) hotspots
    let mut hot: Vec<((FnRef, FnRef), f64)> = Vec::new();
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let (fa, fb) = (a.fn_ref(), b.fn_ref());
            if !interacts(ccim, &fa, &fb) {
                continue;
            }
            let score = attention_score(ccim, merged, &fa, &fb);
            if score >= cfg.hotspot_min_score {
                hot.push((ordered(&fa, &fb), score));
            }
        }
    }
    hot.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    for ((a, b), _) in hot.into_iter().take(cfg.hotspot_pairs) {
        add(&a, &b, PairSource::Hotspot);
    }

    // (ii) counter pairs and (iii) shared written state
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let (fa, fb) = (a.fn_ref(), b.fn_ref());
            if a.owner == b.owner && is_counter_pair(&a.name, &b.name) {
                add(&fa, &fb, PairSource::Counter);
            }
            if let (Some(pa), Some(pb)) = (ccim.footprints.get(&fa), ccim.footprints.get(&fb)) {
                if !pa.writes.is_disjoint(&pb.writes) {
                    add(&fa, &fb, PairSource::SharedState);
                }
            }
        }
    }

    // (iv) deterministic-finding triage
    let flagged: BTreeSet<FnRef> = merged
        .all()
        .into_iter()
        .filter(|s| s.severity >= Severity::Low)
        .filter_map(|s| s.function.clone())
        .filter(|f| ccim.record(f).is_some())
        .collect();
    let flagged: Vec<&FunctionRecord> = flagged.iter().filter_map(|f| ccim.record(f)).collect();
    for (i, a) in flagged.iter().enumerate() {
        for b in &flagged[i + 1..] {
            if shares_boundary(ccim, a, b) {
                add(&a.fn_ref(), &b.fn_ref(), PairSource::Triage);
            }
        }
    }

    // (v) reasoner triage for low-risk contracts
    if let Some(reasoner) = reasoner {
        for c in ccim.in_scope_contracts() {
            let fns: Vec<&&FunctionRecord> = entries.iter().filter(|r| r.owner == c.name).collect();
            if fns.len() < 2 {
                continue;
            }
            let risky = merged
                .all()
                .iter()
                .any(|s| s.severity >= Severity::High && s.function.as_ref().is_some_and(|f| f.owner == c.name));
            if risky {
                continue;
            }
            for (a, b) in llm_triage(ccim, reasoner, cfg, &c.name, &fns) {
                add(&a, &b, PairSource::LlmTriage);
            }
        }
    }

    let mut out: Vec<PairCandidate> = nominated
        .into_iter()
        .map(|(pair, sources)| {
            let source_confidence = sources.iter().map(|s| s.confidence(cfg)).fold(0.0, f64::max);
            PairCandidate {
                pair,
                sources,
                source_confidence,
            }
        })
        .collect();
    out.sort_by(|a, b| b.source_confidence.total_cmp(&a.source_confidence).then_with(|| a.pair.cmp(&b.pair)));
    out.truncate(cfg.max_pairs);
    out
}

fn llm_triage(
    ccim: &CcimModel,
    reasoner: &dyn Reasoner,
    cfg: &PipelineConfig,
    contract: &str,
    fns: &[&&FunctionRecord],
) -> Vec<(FnRef, FnRef)> {
    let listing: String = fns.iter().map(|r| format!("- {}: {}\n", r.fn_ref(), r.signature)).collect();
    let prompt = prompts::render(prompts::ID_TRIAGE, &[("contract", contract), ("functions", &listing)]);
    let req = ReasonerRequest::new(stage::ID_TRIAGE, schema::PAIR_TRIAGE, prompt, cfg.prompt_budget);
    let payload = match ask(reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            log::warn!("pair triage for {contract}: unparseable output ({})", e.0);
            return Vec::new();
        }
        Err(e) => {
            log::warn!("pair triage for {contract}: {e}");
            return Vec::new();
        }
    };
    payload
        .get("pairs")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|p| {
            let a = ccim.lookup(p.get("a")?.as_str()?)?.fn_ref();
            let b = ccim.lookup(p.get("b")?.as_str()?)?.fn_ref();
            (a != b).then_some((a, b))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub pair: Vec<FnRef>,
    pub lifecycle: String,
    pub agreed_variables: Vec<String>,
    pub assumptions: Vec<String>,
}

impl BehaviorSpec {
    pub fn is_empty(&self) -> bool {
        self.lifecycle.is_empty() && self.agreed_variables.is_empty() && self.assumptions.is_empty()
    }

    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Lifecycle: {}", self.lifecycle);
        let _ = writeln!(out, "Agreed variables: {}", self.agreed_variables.join(", "));
        for (i, a) in self.assumptions.iter().enumerate() {
            let _ = writeln!(out, "A{}. {a}", i + 1);
        }
        out
    }
}

fn brace_free(s: &str) -> String {
    s.chars().filter(|c| *c != '{' && *c != '}').collect()
}

/// Interface skeleton of the pair's contracts: documentation and
/// signatures only, without any brace.
pub fn skeleton(ccim: &CcimModel, pair: &(FnRef, FnRef)) -> String {
    let owners: BTreeSet<&str> = [pair.0.owner.as_str(), pair.1.owner.as_str()].into_iter().collect();
    let mut out = String::new();
    for owner in owners {
        let Some(c) = ccim.contract(owner) else { continue };
        if !c.natspec.is_empty() {
            let _ = writeln!(out, "{}", c.natspec);
        }
        let bases = if c.bases.is_empty() { String::new() } else { format!(" is {}", c.bases.join(", ")) };
        let _ = writeln!(out, "contract {}{bases}", c.name);
        for r in ccim.records.iter().filter(|r| r.owner == owner) {
            let mark = if r.fn_ref() == pair.0 || r.fn_ref() == pair.1 { " (in pair)" } else { "" };
            if !r.natspec.is_empty() {
                let _ = writeln!(out, "    {}", r.natspec.replace('\n', "\n    "));
            }
            let _ = writeln!(out, "    {};{mark}", r.signature);
        }
        out.push('\n');
    }
    brace_free(&out)
}

pub fn spec_prompt(ccim: &CcimModel, pair: &(FnRef, FnRef)) -> String {
    let p = format!("{} / {}", pair.0, pair.1);
    brace_free(&prompts::render(prompts::ID_SPEC, &[("pair", &p), ("skeleton", &skeleton(ccim, pair))]))
}

fn strings(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(a)) => a.iter().filter_map(|x| x.as_str().map(|s| s.trim().to_string())).filter(|s| !s.is_empty()).collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    }
}

/// Skeleton-only spec inference; failure yields an empty spec.
pub fn infer_spec(ccim: &CcimModel, pair: &(FnRef, FnRef), reasoner: &dyn Reasoner, cfg: &PipelineConfig) -> BehaviorSpec {
    let prompt = spec_prompt(ccim, pair);
    let mut spec = BehaviorSpec {
        pair: vec![pair.0.clone(), pair.1.clone()],
        ..BehaviorSpec::default()
    };
    let req = ReasonerRequest::new(stage::ID_SPEC, schema::BEHAVIOR_SPEC, prompt, cfg.prompt_budget);
    match ask(reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => {
            let p = p.get("spec").cloned().unwrap_or(p);
            spec.lifecycle = p.get("lifecycle").and_then(Value::as_str).unwrap_or("").trim().to_string();
            spec.agreed_variables = strings(p.get("agreed_variables"));
            spec.assumptions = strings(p.get("assumptions"));
        }
        Ok(Err(e)) => log::warn!("spec inference for {} / {}: unparseable output ({})", pair.0, pair.1, e.0),
        Err(e) => log::warn!("spec inference for {} / {}: {e}", pair.0, pair.1),
    }
    spec
}

pub const CHECKLIST: [&str; 7] = [
    "Assumptions: for every expected-behavior assumption, answer ENFORCE or VIOLATE with line citations.",
    "Shared-state usage: do both functions read and write the shared variables consistently?",
    "Value-flow trace: follow every token or ether movement from entry to exit.",
    "Accounting consistency: do the increments of one function match the decrements of the other?",
    "Invariant preservation: does every invariant implied by the assumptions survive any interleaving?",
    "Arithmetic safety: overflow, truncation, rounding direction and division by zero.",
    "Verdict: is the pair exploitable as a whole?",
];

/// The precondition union of both functions with parameter names restored.
fn precondition_union(ccim: &CcimModel, fns: &[&FnRef]) -> String {
    let mut out = String::new();
    for f in fns {
        let Some(r) = ccim.record(f) else { continue };
        for p in itpc::preconditions(r) {
            let text = p.params.iter().fold(p.template.clone(), |acc, &i| {
                acc.replace(&format!("${i}"), r.params.get(i).map_or("?", |x| x.name.as_str()))
            });
            let _ = writeln!(out, "- {f}: `{text}` (line {})", p.line);
        }
    }
    if out.is_empty() {
        out.push_str("none\n");
    }
    out
}

pub fn verify_prompt(ctx: &PipelineContext, pair: &(FnRef, FnRef), spec: &BehaviorSpec) -> String {
    let first = if spec.is_empty() { 2 } else { 1 };
    let checklist: String = (first..=7).map(|i| format!("({i}) {}\n", CHECKLIST[i - 1])).collect();
    let mut sources = String::new();
    for f in [&pair.0, &pair.1] {
        if let Some(r) = ctx.ccim.record(f) {
            let _ = writeln!(sources, "### {f}\n{}\n{}", evidence::facts(ctx.ccim, r), evidence::numbered(r));
        }
    }
    let spec_text = if spec.is_empty() { "unavailable".to_string() } else { spec.render() };
    prompts::render(
        prompts::ID_VERIFY,
        &[
            ("pair", &format!("{} / {}", pair.0, pair.1)),
            ("spec", &spec_text),
            ("preconditions", &precondition_union(ctx.ccim, &[&pair.0, &pair.1])),
            ("sources", &crate::reasoner::truncate_chars(&sources, ctx.cfg.prompt_budget / 2)),
            ("checklist", &checklist),
        ],
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub findings: Vec<Finding>,
    pub rejected: Vec<String>,
}

/// Seven-point checklist; VIOLATE items need a line cite or an exploit trace.
pub fn spec_verify(ctx: &PipelineContext, pair: &(FnRef, FnRef), spec: &BehaviorSpec) -> VerifyOutcome {
    let mut out = VerifyOutcome::default();
    let req = ReasonerRequest::new(stage::ID_VERIFY, schema::SPEC_VERIFY, verify_prompt(ctx, pair, spec), ctx.cfg.prompt_budget);
    let payload = match ask(ctx.reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            log::warn!("spec verification for {} / {}: unparseable output ({})", pair.0, pair.1, e.0);
            return out;
        }
        Err(e) => {
            log::warn!("spec verification for {} / {}: {e}", pair.0, pair.1);
            return out;
        }
    };
    let fallback = [pair.0.clone(), pair.1.clone()];
    for item in payload.get("items").and_then(Value::as_array).into_iter().flatten() {
        let n = item.get("item").and_then(Value::as_u64).unwrap_or(0) as usize;
        let status = item.get("status").and_then(Value::as_str).unwrap_or("").trim().to_ascii_uppercase();
        if status != "VIOLATE" || !(1..=7).contains(&n) || (n == 1 && spec.is_empty()) {
            continue;
        }
        let cited = !finding::parse_lines(item.get("evidence_line")).is_empty()
            || !finding::parse_lines(item.get("evidence_lines")).is_empty();
        let traced = item.get("exploit_trace").and_then(Value::as_str).is_some_and(|t| !t.trim().is_empty());
        if !cited && !traced {
            let msg = format!("{} / {}: item {n} VIOLATE without citation or trace rejected", pair.0, pair.1);
            log::info!("{msg}");
            out.rejected.push(msg);
            continue;
        }
        if let Some(mut f) = finding::finding_from_json(item, Pipeline::I, stage::ID_VERIFY, ctx.ccim, &fallback, Severity::Medium) {
            if item.get("title").is_none() {
                f.title = format!("Checklist item {n} violated by {} / {}", pair.0, pair.1);
            }
            if f.description.is_empty() {
                f.description = CHECKLIST[n - 1].to_string();
            }
            f.confidence = finding::base_confidence(
                &ctx.cfg.scoring,
                f.severity,
                f.affected_functions.iter().flat_map(|g| ctx.signals.for_function(g)).map(|s| s.id.as_str()).collect::<BTreeSet<_>>().len(),
            );
            out.findings.push(f);
        }
    }
    out
}

/// Functions that move value while doing unchecked arithmetic.
pub fn standalone_slots(ccim: &CcimModel) -> Vec<FnRef> {
    ccim.records.iter().filter(|r| itpc::is_high_risk(ccim, r)).map(FunctionRecord::fn_ref).collect()
}

pub fn audit_standalone(ctx: &PipelineContext) -> VerifyOutcome {
    let slots = standalone_slots(ctx.ccim);
    let results: Vec<VerifyOutcome> = slots
        .par_iter()
        .map(|f| {
            let Some(r) = ctx.ccim.record(f) else { return VerifyOutcome::default() };
            let name = f.to_string();
            let prompt = prompts::render(
                prompts::ID_STANDALONE,
                &[("function", &name), ("facts", &evidence::facts(ctx.ccim, r)), ("body", &evidence::numbered(r))],
            );
            let mut out = VerifyOutcome::default();
            for found in ask_findings(ctx, stage::ID_STANDALONE, prompt, Pipeline::I, std::slice::from_ref(f)) {
                if found.evidence_lines.is_empty() && found.proof_trace.trim().is_empty() {
                    out.rejected.push(format!("{f}: standalone finding `{}` without citation or trace rejected", found.title));
                } else {
                    out.findings.push(found);
                }
            }
            out
        })
        .collect();
    let mut out = VerifyOutcome::default();
    for r in results {
        out.findings.extend(r.findings);
        out.rejected.extend(r.rejected);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdReport {
    pub pairs: Vec<PairCandidate>,
    pub specs_inferred: usize,
    pub standalone_slots: usize,
    pub rejected: Vec<String>,
    pub contradiction: FilterOutcome,
    pub recalibrations: Vec<RuleApplication>,
    pub findings: Vec<Finding>,
}

/// The whole pipeline. Findings carry ids `I-001`, `I-002`, ...
pub fn run_id(ctx: &PipelineContext) -> IdReport {
    let pairs = select_pairs(ctx.ccim, ctx.signals, Some(ctx.reasoner), ctx.cfg);
    let audited: Vec<(bool, VerifyOutcome)> = pairs
        .par_iter()
        .map(|p| {
            let spec = infer_spec(ctx.ccim, &p.pair, ctx.reasoner, ctx.cfg);
            (!spec.is_empty(), spec_verify(ctx, &p.pair, &spec))
        })
        .collect();
    let mut report = IdReport {
        standalone_slots: standalone_slots(ctx.ccim).len(),
        ..IdReport::default()
    };
    let mut found = Vec::new();
    for (has_spec, o) in audited {
        report.specs_inferred += usize::from(has_spec);
        found.extend(o.findings);
        report.rejected.extend(o.rejected);
    }
    let standalone = audit_standalone(ctx);
    found.extend(standalone.findings);
    report.rejected.extend(standalone.rejected);
    report.pairs = pairs;

    finding::canonical_order(&mut found);
    finding::renumber(&mut found, Pipeline::I);
    let (kept, filtered) = calibration::self_contradiction_filter(found);
    let (kept, log) = calibration::recalibrate_severity(kept, ctx.ccim);
    report.contradiction = filtered;
    report.recalibrations = log;
    report.findings = kept;
    report
}
