//! The dossier-driven pipeline.
//!
//! Every function gets a dossier: its structural facts from the model and
//! the signals attached to it. Flagged dossiers go through a per-item
//! checklist (Phase A); contract-level lenses (Phase B) and interaction
//! groups (Phase C) widen the search. Phase D verifies claims, routing most
//! findings around the reasoner with deterministic pre-filters, and Phase E
//! recalibrates severity against access-control evidence. Phases D and E
//! never create findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::calibration::{self, RuleApplication};
use crate::catalog::{AttackVectors, ATTACK_VECTORS};
use crate::ccim::{CcimModel, FunctionRecord, Mutability, Visibility};
use crate::config::PipelineConfig;
use crate::evidence::{self, SourceBlock};
use crate::finding::{self, base_confidence, Finding, Flag};
use crate::ingest::AuditSource;
use crate::prompts;
use crate::reasoner::{ask, schema, stage, Reasoner, ReasonerRequest};
use crate::signals::{Engine, MergedSignals, Signal};
use crate::types::{FnRef, Pipeline, Severity, VarId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralFacts {
    pub visibility: Visibility,
    pub mutability: Mutability,
    pub modifiers: Vec<String>,
    pub guards: Vec<String>,
    pub reads: Vec<VarId>,
    pub writes: Vec<VarId>,
    pub external_calls: Vec<String>,
    pub fund_flag: bool,
    pub src: (usize, usize),
    pub body: String,
}

impl StructuralFacts {
    fn of(r: &FunctionRecord) -> Self {
        StructuralFacts {
            visibility: r.vis,
            mutability: r.mutability,
            modifiers: r.modifiers.iter().map(|m| m.name.clone()).collect(),
            guards: r.guards.iter().map(|g| g.expr.clone()).collect(),
            reads: r.reads.iter().cloned().collect(),
            writes: r.writes.iter().cloned().collect(),
            external_calls: r
                .call_sites
                .iter()
                .map(|c| format!("{}.{}", c.target.name, c.method))
                .chain(r.low_level_calls.iter().map(|c| format!("{}.{}", c.receiver, c.kind)))
                .collect(),
            fund_flag: r.fund_flag,
            src: r.src,
            body: r.body.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskItem {
    pub source_tag: Engine,
    pub id: String,
    pub description: String,
    pub confidence: f64,
    pub severity: Severity,
    pub line_hint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dossier {
    pub function: FnRef,
    pub structural_facts: StructuralFacts,
    pub risk_items: Vec<RiskItem>,
}

impl Dossier {
    pub fn flagged(&self) -> bool {
        !self.risk_items.is_empty()
    }
}

fn risk_item(s: &Signal) -> RiskItem {
    RiskItem {
        source_tag: s.source_tag,
        id: s.id.clone(),
        description: s.description.clone(),
        confidence: s.confidence,
        severity: s.severity,
        line_hint: s.line_hint,
    }
}

/// Functions a signal is attached to.
fn targets(ccim: &CcimModel, s: &Signal) -> Vec<FnRef> {
    let rule = s.rule();
    if rule == "CCIM-ROTATION" {
        if let Some(v) = s.subject.as_deref().and_then(|v| v.parse::<VarId>().ok()) {
            let readers: Vec<FnRef> = ccim.deps.readers_of(&v).cloned().collect();
            if !readers.is_empty() {
                return readers;
            }
        }
    } else if rule == "CCIM-TRUSTGAP" {
        if let Some(callee) = s.subject.as_deref() {
            let callers: BTreeSet<FnRef> = ccim
                .graph
                .edges
                .iter()
                .filter(|(_, b)| b.owner == callee)
                .map(|(a, _)| a.clone())
                .collect();
            if !callers.is_empty() {
                return callers.into_iter().collect();
            }
        }
    }
    if let Some(f) = &s.function {
        if ccim.record(f).is_some() {
            return vec![f.clone()];
        }
        let by_name = if f.owner.is_empty() { ccim.lookup(&f.name) } else { None };
        if let Some(r) = by_name {
            return vec![r.fn_ref()];
        }
    }
    if let Some(r) = s.line_hint.and_then(|l| ccim.record_at_line(l)) {
        return vec![r.fn_ref()];
    }
    Vec::new()
}

/// One dossier per function record, in record order.
pub fn compile_dossiers(ccim: &CcimModel, merged: &MergedSignals) -> Vec<Dossier> {
    let mut items: BTreeMap<FnRef, Vec<RiskItem>> = BTreeMap::new();
    for s in merged.all() {
        let t = targets(ccim, s);
        if t.is_empty() {
            log::warn!("signal {} names no known function; dropped from dossiers", s.id);
        }
        for f in t {
            let v = items.entry(f).or_default();
            if !v.iter().any(|i| i.id == s.id) {
                v.push(risk_item(s));
            }
        }
    }
    ccim.records
        .iter()
        .filter(|r| ccim.contract(&r.owner).is_none_or(|c| c.kind != crate::ccim::ContractKind::Interface))
        .map(|r| {
            let f = r.fn_ref();
            let mut risk_items = items.remove(&f).unwrap_or_default();
            risk_items.sort_by(|a, b| {
                b.confidence
                    .total_cmp(&a.confidence)
                    .then_with(|| a.source_tag.cmp(&b.source_tag))
                    .then_with(|| a.id.cmp(&b.id))
            });
            Dossier {
                function: f,
                structural_facts: StructuralFacts::of(r),
                risk_items,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ItemVerdict {
    Real,
    FalsePositive,
    Unclear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistVerdict {
    pub item_id: String,
    pub verdict: ItemVerdict,
    pub evidence_line: Option<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DdError {
    #[error("dossier for {0} has no risk items and must not be verified")]
    NotFlagged(FnRef),
}

/// Everything a pipeline reads; shared immutably by both pipelines.
pub struct PipelineContext<'a> {
    pub ccim: &'a CcimModel,
    pub source: &'a AuditSource,
    pub signals: &'a MergedSignals,
    pub reasoner: &'a dyn Reasoner,
    pub cfg: &'a PipelineConfig,
}

impl PipelineContext<'_> {
    fn request(&self, stage: &str, schema: &str, prompt: String) -> ReasonerRequest {
        ReasonerRequest::new(stage, schema, prompt, self.cfg.prompt_budget)
    }

    fn capped(&self, text: &str) -> String {
        crate::reasoner::truncate_chars(text, self.cfg.prompt_budget / 2)
    }

    /// Distinct signals on any of the functions.
    fn corroborating(&self, fns: &[FnRef]) -> usize {
        fns.iter()
            .flat_map(|f| self.signals.for_function(f))
            .map(|s| s.id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn score(&self, f: &mut Finding) {
        f.confidence = base_confidence(&self.cfg.scoring, f.severity, self.corroborating(&f.affected_functions));
    }

    pub(crate) fn pragma_of(&self, r: &FunctionRecord) -> String {
        self.source
            .offsets
            .file_of(r.src.0)
            .and_then(|p| self.source.pragma_of_file(p))
            .unwrap_or("unknown")
            .to_string()
    }
}

pub fn phase_a_prompt(ctx: &PipelineContext, d: &Dossier) -> String {
    let r = ctx.ccim.record(&d.function);
    let mut items = String::new();
    for (i, it) in d.risk_items.iter().enumerate() {
        let line = it.line_hint.map(|l| format!(", line {l}")).unwrap_or_default();
        let _ = writeln!(
            items,
            "{}. [{}] `{}` ({} {:.2}{line}): {}",
            i + 1,
            it.source_tag,
            it.id,
            it.severity,
            it.confidence,
            it.description
        );
    }
    let fn_name = d.function.to_string();
    let (pragma, facts, body) = match r {
        Some(r) => (ctx.pragma_of(r), evidence::facts(ctx.ccim, r), ctx.capped(&evidence::numbered(r))),
        None => (String::from("unknown"), String::new(), String::new()),
    };
    prompts::render(
        prompts::PHASE_A,
        &[("function", &fn_name), ("pragma", &pragma), ("facts", &facts), ("body", &body), ("items", &items)],
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseAOutcome {
    pub verdicts: Vec<ChecklistVerdict>,
    pub findings: Vec<Finding>,
}

fn parse_item_verdict(s: &str) -> ItemVerdict {
    match s.trim().to_ascii_uppercase().replace([' ', '-'], "_").as_str() {
        "REAL" => ItemVerdict::Real,
        "FALSE_POSITIVE" => ItemVerdict::FalsePositive,
        _ => ItemVerdict::Unclear,
    }
}

/// Checklist verification of one flagged dossier.
pub fn phase_a_verify(ctx: &PipelineContext, d: &Dossier) -> Result<PhaseAOutcome, DdError> {
    if !d.flagged() {
        return Err(DdError::NotFlagged(d.function.clone()));
    }
    let unclear = || {
        d.risk_items
            .iter()
            .map(|i| ChecklistVerdict {
                item_id: i.id.clone(),
                verdict: ItemVerdict::Unclear,
                evidence_line: None,
            })
            .collect::<Vec<_>>()
    };
    let req = ctx.request(stage::PHASE_A, schema::CHECKLIST, phase_a_prompt(ctx, d));
    let resp = match ask(ctx.reasoner, &req) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("phase A on {}: {e}", d.function);
            return Ok(PhaseAOutcome {
                verdicts: unclear(),
                findings: Vec::new(),
            });
        }
    };
    let payload = match resp.payload {
        Ok(p) => p,
        Err(e) => {
            log::warn!("phase A on {}: unparseable output ({}); all items unclear", d.function, e.0);
            return Ok(PhaseAOutcome {
                verdicts: unclear(),
                findings: Vec::new(),
            });
        }
    };
    let answers: Vec<&Value> = payload.get("items").and_then(Value::as_array).map(|a| a.iter().collect()).unwrap_or_default();
    let mut out = PhaseAOutcome::default();
    for item in &d.risk_items {
        let answer = answers.iter().find(|a| a.get("id").and_then(Value::as_str) == Some(item.id.as_str()));
        let mut v = ChecklistVerdict {
            item_id: item.id.clone(),
            verdict: ItemVerdict::Unclear,
            evidence_line: None,
        };
        if let Some(a) = answer {
            v.verdict = parse_item_verdict(a.get("verdict").and_then(Value::as_str).unwrap_or(""));
            v.evidence_line = finding::parse_lines(a.get("evidence_line")).first().copied();
            if v.verdict == ItemVerdict::Real && v.evidence_line.is_none() {
                log::info!("phase A on {}: REAL without evidence line for {}; treated as unclear", d.function, item.id);
                v.verdict = ItemVerdict::Unclear;
            }
            if v.verdict == ItemVerdict::Real {
                if let Some(mut f) =
                    finding::finding_from_json(a, Pipeline::D, stage::PHASE_A, ctx.ccim, std::slice::from_ref(&d.function), item.severity)
                {
                    if a.get("title").is_none() {
                        f.title = format!("{} in {}", item.id.split('@').next().unwrap_or(&item.id), d.function);
                    }
                    if f.description.is_empty() {
                        f.description = item.description.clone();
                    }
                    f.evidence_lines = v.evidence_line.into_iter().collect();
                    f.signal_ids = vec![item.id.clone()];
                    ctx.score(&mut f);
                    out.findings.push(f);
                }
            }
        }
        out.verdicts.push(v);
    }
    Ok(out)
}

/// Contract-level review lenses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lens {
    B,
    B2,
    B3,
    B4,
    B5,
    B6,
}

impl Lens {
    pub const FIRST_PASS: [Lens; 4] = [Lens::B, Lens::B2, Lens::B3, Lens::B4];
    pub const SECOND_PASS: [Lens; 2] = [Lens::B5, Lens::B6];

    pub fn title(self) -> &'static str {
        match self {
            Lens::B => "B contract review",
            Lens::B2 => "B2 invariant extraction",
            Lens::B3 => "B3 attack-path synthesis",
            Lens::B4 => "B4 adversarial review",
            Lens::B5 => "B5 state-machine review",
            Lens::B6 => "B6 residual sweep",
        }
    }

    fn description(self) -> &'static str {
        match self {
            Lens::B => "Review the contract bottom-up, function by function, using the signals as leads.",
            Lens::B2 => "State the invariants the contract's storage must preserve, then look for any function that breaks one.",
            Lens::B3 => "Chain several calls, possibly across contracts, into an end-to-end attack path.",
            Lens::B4 => "Act as an attacker with unlimited capital and flash loans; find the most profitable abuse.",
            Lens::B5 => "Model the contract as a state machine and look for illegal or missing transitions.",
            Lens::B6 => "Look for anything the findings so far do not cover.",
        }
    }
}

/// Contracts ordered by aggregated risk: the sum of signal confidences on
/// their functions.
pub fn contract_priorities(ccim: &CcimModel, merged: &MergedSignals) -> Vec<(String, f64)> {
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for r in &ccim.records {
        scores.entry(r.owner.clone()).or_insert(0.0);
    }
    for s in merged.all() {
        if let Some(f) = &s.function {
            if let Some(v) = scores.get_mut(&f.owner) {
                *v += s.confidence;
            }
        }
    }
    let mut v: Vec<(String, f64)> = scores.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

pub fn phase_b_prompt(ctx: &PipelineContext, lens: Lens, contract: &str, score: f64, known: &[Finding]) -> String {
    let ccim = ctx.ccim;
    let mut signals = String::new();
    let mut source = String::new();
    for r in ccim.records.iter().filter(|r| r.owner == contract) {
        signals.push_str(&ctx.signals.markdown_for(&r.fn_ref()));
        let _ = writeln!(source, "// {}\n{}", r.fn_ref(), evidence::numbered(r));
    }
    let mut interactions = String::new();
    for p in ccim.trust.pairs.iter().filter(|p| p.caller == contract || p.callee == contract) {
        let _ = writeln!(interactions, "- {} -> {} (trust gap: {})", p.caller, p.callee, p.gap);
    }
    for (a, b) in ccim.graph.edges.iter().filter(|(a, b)| a.owner == contract || b.owner == contract) {
        let _ = writeln!(interactions, "- call {a} -> {b}");
    }
    let known: String = known.iter().map(|f| format!("- {} ({})\n", f.title, f.severity)).collect();
    let none = |s: String| if s.is_empty() { "none\n".to_string() } else { s };
    prompts::render(
        prompts::PHASE_B,
        &[
            ("lens", lens.title()),
            ("lens_description", lens.description()),
            ("contract", contract),
            ("score", &format!("{score:.2}")),
            ("signals", &none(signals)),
            ("interactions", &none(interactions)),
            ("known", &none(known)),
            ("source", &ctx.capped(&source)),
        ],
    )
}

/// Findings of a `{"findings": [...]}` payload.
pub(crate) fn findings_payload(
    ctx: &PipelineContext,
    payload: &Value,
    pipeline: Pipeline,
    origin: &str,
    fallback: &[FnRef],
) -> Vec<Finding> {
    payload
        .get("findings")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(|v| finding::finding_from_json(v, pipeline, origin, ctx.ccim, fallback, Severity::Medium))
        .map(|mut f| {
            ctx.score(&mut f);
            f
        })
        .collect()
}

/// Ask for a findings list; any failure yields no findings.
pub(crate) fn ask_findings(
    ctx: &PipelineContext,
    stage_tag: &str,
    prompt: String,
    pipeline: Pipeline,
    fallback: &[FnRef],
) -> Vec<Finding> {
    let req = ctx.request(stage_tag, schema::FINDINGS, prompt);
    match ask(ctx.reasoner, &req) {
        Ok(resp) => match resp.payload {
            Ok(p) => findings_payload(ctx, &p, pipeline, stage_tag, fallback),
            Err(e) => {
                log::warn!("{stage_tag}: unparseable output ({})", e.0);
                Vec::new()
            }
        },
        Err(e) => {
            log::warn!("{stage_tag}: {e}");
            Vec::new()
        }
    }
}

pub fn phase_b_review(ctx: &PipelineContext, lens: Lens, contract: &str, score: f64, known: &[Finding]) -> Vec<Finding> {
    let fallback: Vec<FnRef> = ctx
        .ccim
        .records
        .iter()
        .filter(|r| r.owner == contract)
        .take(1)
        .map(FunctionRecord::fn_ref)
        .collect();
    ask_findings(ctx, stage::PHASE_B, phase_b_prompt(ctx, lens, contract, score, known), Pipeline::D, &fallback)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Pair,
    Call,
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub id: String,
    pub kind: InteractionKind,
    pub functions: Vec<FnRef>,
    pub var: Option<VarId>,
}

/// Writer-reader pairs per shared variable, caller-callee pairs per graph
/// edge, and one group per variable touched by three or more functions.
pub fn build_phase_c_interactions(ccim: &CcimModel) -> Vec<Interaction> {
    let mut out = Vec::new();
    let vars: BTreeSet<&VarId> = ccim.deps.writers.keys().chain(ccim.deps.readers.keys()).collect();
    for v in vars {
        let writers: BTreeSet<&FnRef> = ccim.deps.writers_of(v).collect();
        let readers: BTreeSet<&FnRef> = ccim.deps.readers_of(v).collect();
        for w in &writers {
            for r in &readers {
                if w != r {
                    out.push(Interaction {
                        id: format!("pair:{v}:{w}->{r}"),
                        kind: InteractionKind::Pair,
                        functions: vec![(*w).clone(), (*r).clone()],
                        var: Some(v.clone()),
                    });
                }
            }
        }
        let all: BTreeSet<&FnRef> = writers.union(&readers).copied().collect();
        if all.len() >= 3 {
            out.push(Interaction {
                id: format!("group:{v}"),
                kind: InteractionKind::Group,
                functions: all.into_iter().cloned().collect(),
                var: Some(v.clone()),
            });
        }
    }
    for (a, b) in &ccim.graph.edges {
        out.push(Interaction {
            id: format!("call:{a}->{b}"),
            kind: InteractionKind::Call,
            functions: vec![a.clone(), b.clone()],
            var: None,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InteractionVerdict {
    Vulnerable,
    Safe,
    Unclear,
}

pub fn parse_interaction_verdict(s: &str) -> InteractionVerdict {
    match s.trim().to_ascii_uppercase().as_str() {
        "VULNERABLE" => InteractionVerdict::Vulnerable,
        "SAFE" => InteractionVerdict::Safe,
        _ => InteractionVerdict::Unclear,
    }
}

pub fn phase_c_prompt(ctx: &PipelineContext, it: &Interaction) -> String {
    let summary = match (&it.kind, &it.var) {
        (InteractionKind::Group, Some(v)) => format!("{} functions share `{v}`", it.functions.len()),
        (InteractionKind::Pair, Some(v)) => format!("{} writes `{v}`, {} reads it", it.functions[0], it.functions[1]),
        _ => format!("{} calls {}", it.functions[0], it.functions[1]),
    };
    let mut sources = String::new();
    for f in &it.functions {
        if let Some(r) = ctx.ccim.record(f) {
            let _ = writeln!(sources, "// {f}\n{}", evidence::numbered(r));
        }
    }
    prompts::render(
        prompts::PHASE_C,
        &[("id", &it.id), ("kind", &format!("{:?}", it.kind).to_lowercase()), ("summary", &summary), ("sources", &ctx.capped(&sources))],
    )
}

pub fn phase_c_verify(ctx: &PipelineContext, it: &Interaction) -> Vec<Finding> {
    let req = ctx.request(stage::PHASE_C, schema::INTERACTIONS, phase_c_prompt(ctx, it));
    let payload = match ask(ctx.reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            log::warn!("phase C on {}: unparseable output ({})", it.id, e.0);
            return Vec::new();
        }
        Err(e) => {
            log::warn!("phase C on {}: {e}", it.id);
            return Vec::new();
        }
    };
    payload
        .get("verdicts")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter(|v| v.get("id").and_then(Value::as_str).is_none_or(|id| id == it.id))
        .filter(|v| parse_interaction_verdict(v.get("verdict").and_then(Value::as_str).unwrap_or("")) == InteractionVerdict::Vulnerable)
        .filter_map(|v| finding::finding_from_json(v, Pipeline::D, stage::PHASE_C, ctx.ccim, &it.functions, Severity::Medium))
        .map(|mut f| {
            if f.affected_functions.len() < it.functions.len() {
                for g in &it.functions {
                    if !f.affected_functions.contains(g) {
                        f.affected_functions.push(g.clone());
                    }
                }
            }
            ctx.score(&mut f);
            f
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Route {
    AdminTrust,
    VectorConfirmed,
    GraphSkip,
    NeedsReasoner,
}

/// The first attack vector the finding's text and a same-function signal
/// both match.
pub fn matched_vector<'v>(f: &Finding, merged: &MergedSignals, vectors: &'v AttackVectors) -> Option<&'v str> {
    let text = f.text();
    let signals: Vec<&Signal> = f.affected_functions.iter().flat_map(|g| merged.for_function(g)).collect();
    vectors
        .vectors
        .iter()
        .find(|v| v.matches_text(&text) && signals.iter().any(|s| v.matches_signal(s)))
        .map(|v| v.id.as_str())
}

fn internally_called(ccim: &CcimModel, f: &FnRef) -> bool {
    ccim.records.iter().any(|r| r.internal_calls.contains(f))
}

/// Deterministic routing; exactly one route per finding.
pub fn phase_d_prefilter(f: &Finding, ccim: &CcimModel, merged: &MergedSignals, cfg: &PipelineConfig) -> Route {
    phase_d_prefilter_with(f, ccim, merged, cfg, &ATTACK_VECTORS)
}

pub fn phase_d_prefilter_with(
    f: &Finding,
    ccim: &CcimModel,
    merged: &MergedSignals,
    cfg: &PipelineConfig,
    vectors: &AttackVectors,
) -> Route {
    let records: Vec<&FunctionRecord> = f.affected_functions.iter().filter_map(|g| ccim.record(g)).collect();
    let entry: Vec<&&FunctionRecord> = records.iter().filter(|r| r.vis.is_entry()).collect();
    if !entry.is_empty() && entry.iter().all(|r| ccim.is_admin(&r.fn_ref())) {
        return Route::AdminTrust;
    }
    if f.confidence >= cfg.vector_min_confidence
        && !f.evidence_lines.is_empty()
        && f.proof_trace.chars().count() >= cfg.vector_min_trace
        && matched_vector(f, merged, vectors).is_some()
    {
        return Route::VectorConfirmed;
    }
    let all_resolved = !records.is_empty() && records.len() == f.affected_functions.len();
    if all_resolved
        && records.iter().all(|r| {
            r.mutability.is_readonly() && !ccim.graph.mentions(&r.fn_ref()) && !internally_called(ccim, &r.fn_ref())
        })
    {
        return Route::GraphSkip;
    }
    Route::NeedsReasoner
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimVerdict {
    Confirmed,
    Disproved { quote: String },
    Unclear { protocol_violation: bool },
}

pub fn claim_source(f: &Finding, ccim: &CcimModel, budget: usize) -> SourceBlock {
    evidence::source_block(ccim, &evidence::mentioned_functions(f, ccim), budget)
}

pub fn phase_d_prompt(f: &Finding, block: &SourceBlock) -> String {
    prompts::render(
        prompts::PHASE_D,
        &[
            ("title", &f.title),
            ("severity", f.severity.as_str()),
            ("description", &f.description),
            ("source", &block.text),
        ],
    )
}

/// Claim-first verification. DISPROVED needs a quote present in the
/// supplied source; otherwise the answer is UNCLEAR with a protocol flag.
pub fn phase_d_claim_first(
    f: &Finding,
    ccim: &CcimModel,
    reasoner: &dyn Reasoner,
    cfg: &PipelineConfig,
    stage_tag: &str,
) -> ClaimVerdict {
    let block = claim_source(f, ccim, cfg.char_budget);
    let req = ReasonerRequest::new(stage_tag, schema::CLAIM_FIRST, phase_d_prompt(f, &block), cfg.prompt_budget);
    let payload = match ask(reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            log::warn!("{stage_tag} on {}: unparseable output ({})", f.id, e.0);
            return ClaimVerdict::Unclear { protocol_violation: false };
        }
        Err(e) => {
            log::warn!("{stage_tag} on {}: {e}", f.id);
            return ClaimVerdict::Unclear { protocol_violation: false };
        }
    };
    let verdict = payload.get("verdict").and_then(Value::as_str).unwrap_or("").trim().to_ascii_uppercase();
    let quote = payload.get("quote").and_then(Value::as_str).unwrap_or("").to_string();
    match verdict.as_str() {
        "CONFIRMED" | "VERIFIED" => ClaimVerdict::Confirmed,
        "DISPROVED" if block.contains_quote(&quote) => ClaimVerdict::Disproved { quote },
        "DISPROVED" => {
            log::info!("{stage_tag} on {}: DISPROVED without a verifiable quote", f.id);
            ClaimVerdict::Unclear { protocol_violation: true }
        }
        _ => ClaimVerdict::Unclear { protocol_violation: false },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseDRecord {
    pub finding: String,
    pub route: Route,
    pub verdict: Option<ClaimVerdict>,
    pub reasoner_used: bool,
}

/// Apply Phase D to one finding; `None` when it is removed.
pub fn phase_d_apply(ctx: &PipelineContext, mut f: Finding, stage_tag: &str) -> (Option<Finding>, PhaseDRecord) {
    let route = phase_d_prefilter(&f, ctx.ccim, ctx.signals, ctx.cfg);
    let mut rec = PhaseDRecord {
        finding: f.id.clone(),
        route,
        verdict: None,
        reasoner_used: false,
    };
    match route {
        Route::AdminTrust => {
            f.severity = Severity::Low;
            f.flags.insert(Flag::AdminTrust);
            (Some(f), rec)
        }
        Route::VectorConfirmed => {
            f.flags.insert(Flag::VectorConfirmed);
            (Some(f), rec)
        }
        Route::GraphSkip => (None, rec),
        Route::NeedsReasoner => {
            let v = phase_d_claim_first(&f, ctx.ccim, ctx.reasoner, ctx.cfg, stage_tag);
            rec.reasoner_used = true;
            let kept = match &v {
                ClaimVerdict::Disproved { .. } => None,
                ClaimVerdict::Unclear { protocol_violation: true } => {
                    f.flags.insert(Flag::ProtocolViolation);
                    Some(f)
                }
                _ => Some(f),
            };
            rec.verdict = Some(v);
            (kept, rec)
        }
    }
}

pub fn phase_e_package(f: &Finding, ccim: &CcimModel) -> String {
    evidence::access_bundle(f, ccim)
}

/// Severity recalibration. The reasoner's severity wins when given; a null
/// severity falls back on the deterministic rules; failure leaves the
/// severity unchanged.
pub fn phase_e_recalibrate(ctx: &PipelineContext, f: &mut Finding) -> Vec<RuleApplication> {
    let prompt = prompts::render(
        prompts::PHASE_E,
        &[
            ("title", &f.title),
            ("severity", f.severity.as_str()),
            ("description", &f.description),
            ("scenario", &f.attack_scenario),
            ("bundle", &phase_e_package(f, ctx.ccim)),
        ],
    );
    let req = ctx.request(stage::PHASE_E, schema::RECALIBRATE, prompt);
    let payload = match ask(ctx.reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => {
            log::warn!("phase E on {}: unparseable output ({}); severity unchanged", f.id, e.0);
            return Vec::new();
        }
        Err(e) => {
            log::warn!("phase E on {}: {e}; severity unchanged", f.id);
            return Vec::new();
        }
    };
    match payload.get("severity").and_then(Value::as_str).and_then(Severity::parse_loose) {
        Some(s) => {
            if s != f.severity {
                let why = payload.get("justification").and_then(Value::as_str).unwrap_or("");
                f.notes.push(format!("phase E: {} -> {s}: {why}", f.severity));
                f.severity = s;
            }
            Vec::new()
        }
        None => calibration::recalibrate_one(f, ctx.ccim),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DdReport {
    pub dossiers: usize,
    pub flagged: usize,
    /// Findings generated per phase tag.
    pub generated: BTreeMap<String, usize>,
    pub phase_d: Vec<PhaseDRecord>,
    pub recalibrations: Vec<RuleApplication>,
    pub findings: Vec<Finding>,
}

/// The whole pipeline. Findings carry ids `D-001`, `D-002`, ...
pub fn run_dd(ctx: &PipelineContext) -> DdReport {
    let dossiers = compile_dossiers(ctx.ccim, ctx.signals);
    let flagged: Vec<&Dossier> = dossiers.iter().filter(|d| d.flagged()).collect();
    let mut report = DdReport {
        dossiers: dossiers.len(),
        flagged: flagged.len(),
        ..DdReport::default()
    };

    let mut found: Vec<Finding> = flagged
        .par_iter()
        .map(|d| phase_a_verify(ctx, d).map(|o| o.findings).unwrap_or_default())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let contracts = contract_priorities(ctx.ccim, ctx.signals);
    let lenses: &[Lens] = if ctx.cfg.contract_lenses { &Lens::FIRST_PASS } else { &[Lens::B] };
    let run_lenses = |lenses: &[Lens], known: &[Finding]| -> Vec<Finding> {
        let jobs: Vec<(Lens, &(String, f64))> = lenses.iter().flat_map(|l| contracts.iter().map(move |c| (*l, c))).collect();
        jobs.par_iter()
            .map(|(l, (c, score))| phase_b_review(ctx, *l, c, *score, known))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let pass_b = run_lenses(lenses, &found);
    found.extend(pass_b);

    let interactions = build_phase_c_interactions(ctx.ccim);
    let pass_c: Vec<Finding> = interactions
        .par_iter()
        .map(|it| phase_c_verify(ctx, it))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    found.extend(pass_c);

    if ctx.cfg.contract_lenses {
        let pass2 = run_lenses(&Lens::SECOND_PASS, &found);
        found.extend(pass2);
    }

    for f in &found {
        *report.generated.entry(f.origin.clone()).or_default() += 1;
    }
    finding::canonical_order(&mut found);
    finding::renumber(&mut found, Pipeline::D);

    let routed: Vec<(Option<Finding>, PhaseDRecord)> =
        found.into_par_iter().map(|f| phase_d_apply(ctx, f, stage::PHASE_D)).collect();
    let mut survivors = Vec::new();
    for (f, rec) in routed {
        report.phase_d.push(rec);
        survivors.extend(f);
    }

    let recal: Vec<(Finding, Vec<RuleApplication>)> = survivors
        .into_par_iter()
        .map(|mut f| {
            let log = phase_e_recalibrate(ctx, &mut f);
            (f, log)
        })
        .collect();
    for (f, log) in recal {
        report.recalibrations.extend(log);
        report.findings.push(f);
    }
    report
}
