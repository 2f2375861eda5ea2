//! The false-positive reduction funnel.
//!
//! Stages run in cost order: deterministic claim refutation, structural
//! filters, routed claim-first re-verification, the scoring already applied
//! at merge, and the structural verdict engine (eight ground-truth checks
//! followed by one evidence-packaged reasoner call). Stages are barriers;
//! findings within a stage are checked independently.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ccim::{CcimModel, CompiledCatalogue, FunctionRecord, Mutability, RoleCatalogue};
use crate::claims::{self, ClaimType};
use crate::dd::{self, ClaimVerdict, PipelineContext, Route};
use crate::evidence;
use crate::finding::{Finding, Flag, ImpactClass};
use crate::ingest;
use crate::prompts;
use crate::reasoner::{ask, schema, stage, ReasonerRequest};
use crate::triage::MergedFindingSet;
use crate::types::Severity;

static ROLES: LazyLock<CompiledCatalogue> = LazyLock::new(|| RoleCatalogue::default().compiled());

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Disproved,
    Confirmed,
    Uncertain,
    Filtered,
    Passed,
}

impl Verdict {
    pub fn removes(self) -> bool {
        matches!(self, Verdict::Disproved | Verdict::Filtered)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Disproved => "DISPROVED",
            Verdict::Confirmed => "CONFIRMED",
            Verdict::Uncertain => "UNCERTAIN",
            Verdict::Filtered => "FILTERED",
            Verdict::Passed => "PASSED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub finding: String,
    /// 1 to 5; Layer 1 and Layer 2 of the verdict engine are both stage 5.
    pub stage: u8,
    pub verdict: Verdict,
    /// Check or filter name, or the quoted line.
    pub evidence: String,
    /// Cited concatenation lines.
    pub lines: Vec<usize>,
    pub reasoner_used: bool,
}

impl VerdictRecord {
    fn new(f: &Finding, stage: u8, verdict: Verdict, evidence: impl Into<String>, lines: Vec<usize>) -> Self {
        VerdictRecord {
            finding: f.id.clone(),
            stage,
            verdict,
            evidence: evidence.into(),
            lines,
            reasoner_used: false,
        }
    }

    fn passed(f: &Finding, stage: u8) -> Self {
        Self::new(f, stage, Verdict::Passed, "", Vec::new())
    }
}

fn resolved<'a>(f: &Finding, ccim: &'a CcimModel) -> Vec<&'a FunctionRecord> {
    f.affected_functions.iter().filter_map(|g| ccim.record(g)).collect()
}

/// All affected functions resolve (and there is at least one).
fn all_resolved<'a>(f: &Finding, ccim: &'a CcimModel) -> Option<Vec<&'a FunctionRecord>> {
    let rs = resolved(f, ccim);
    (!rs.is_empty() && rs.len() == f.affected_functions.len()).then_some(rs)
}

fn reentrancy_guard_lines(rs: &[&FunctionRecord]) -> Option<Vec<usize>> {
    rs.iter()
        .map(|r| {
            r.is_non_reentrant()
                .then(|| r.modifiers.iter().find(|m| ["nonReentrant", "noReentrancy", "lock"].contains(&m.name.as_str())).map_or(r.src.0, |m| m.line))
        })
        .collect()
}

fn admin_lines(ccim: &CcimModel, rs: &[&FunctionRecord]) -> Option<Vec<usize>> {
    rs.iter()
        .map(|r| ccim.is_admin(&r.fn_ref()).then(|| ROLES.admin_evidence(r).map_or(r.src.0, |(_, l)| l)))
        .collect()
}

fn checked_arithmetic(source: &ingest::AuditSource, rs: &[&FunctionRecord]) -> bool {
    rs.iter().all(|r| {
        let pragma = source.offsets.file_of(r.src.0).and_then(|p| source.pragma_of_file(p));
        pragma.is_some_and(ingest::pragma_at_least_0_8) && r.unchecked.is_empty()
    })
}

fn heads(rs: &[&FunctionRecord]) -> Vec<usize> {
    rs.iter().map(|r| r.src.0).collect()
}

/// Claim refutation against model ground truth; never consults a reasoner.
pub fn stage1_verify(f: &Finding, ccim: &CcimModel, source: &ingest::AuditSource) -> VerdictRecord {
    let rs = all_resolved(f, ccim);
    let disproved = |why: &str, lines: Vec<usize>| VerdictRecord::new(f, 1, Verdict::Disproved, why, lines);
    match claims::classify_claim(f) {
        ClaimType::EvmRace => {
            let heads = heads(&resolved(f, ccim));
            let lines = if heads.is_empty() { f.evidence_lines.clone() } else { heads };
            disproved("evm-race: transactions execute atomically", lines)
        }
        ClaimType::MissingAccessControl => match rs.as_deref().and_then(|rs| admin_lines(ccim, rs)) {
            Some(lines) => disproved("missing-access-control: admin guard present", lines),
            None => VerdictRecord::passed(f, 1),
        },
        ClaimType::Reentrancy => match rs.as_deref().and_then(reentrancy_guard_lines) {
            Some(lines) => disproved("reentrancy: nonReentrant guard present", lines),
            None => VerdictRecord::passed(f, 1),
        },
        ClaimType::IntegerOverflowGe08 => match rs {
            Some(rs) if checked_arithmetic(source, &rs) => disproved("integer-overflow: checked arithmetic (>=0.8, no unchecked)", heads(&rs)),
            _ => VerdictRecord::passed(f, 1),
        },
        ClaimType::Other => VerdictRecord::passed(f, 1),
    }
}

/// Structural filters: bare centralization complaints, self-disproving
/// text and wholly unresolvable citations.
pub fn stage2_filter(f: &Finding, ccim: &CcimModel) -> VerdictRecord {
    let text = f.text();
    if claims::any_of(&text, claims::CENTRALIZATION) && f.evidence_lines.is_empty() {
        return VerdictRecord::new(f, 2, Verdict::Filtered, "centralization", Vec::new());
    }
    if let Some(p) = claims::self_disproving_phrase(f) {
        return VerdictRecord::new(f, 2, Verdict::Filtered, format!("self-disproving: {p}"), Vec::new());
    }
    if resolved(f, ccim).is_empty() {
        return VerdictRecord::new(f, 2, Verdict::Filtered, "unresolvable", Vec::new());
    }
    VerdictRecord::passed(f, 2)
}

/// Routed re-verification. Short-circuits avoid the reasoner; otherwise the
/// claim-first protocol decides, and only a quoted line disproves.
pub fn stage3_route_and_verify(ctx: &PipelineContext, f: &mut Finding) -> VerdictRecord {
    match dd::phase_d_prefilter(f, ctx.ccim, ctx.signals, ctx.cfg) {
        Route::AdminTrust => {
            f.severity = Severity::Low;
            f.flags.insert(Flag::AdminTrust);
            VerdictRecord::new(f, 3, Verdict::Passed, "admin-trust", Vec::new())
        }
        Route::VectorConfirmed => {
            f.flags.insert(Flag::VectorConfirmed);
            VerdictRecord::new(f, 3, Verdict::Confirmed, "vector-confirmed", f.evidence_lines.clone())
        }
        Route::GraphSkip => VerdictRecord::new(f, 3, Verdict::Filtered, "graph-skip", Vec::new()),
        Route::NeedsReasoner => {
            let v = dd::phase_d_claim_first(f, ctx.ccim, ctx.reasoner, ctx.cfg, stage::STAGE3);
            let mut rec = match v {
                ClaimVerdict::Confirmed => VerdictRecord::new(f, 3, Verdict::Confirmed, "claim-first", Vec::new()),
                ClaimVerdict::Disproved { quote } => {
                    let lines = quote_lines(ctx, f, &quote);
                    VerdictRecord::new(f, 3, Verdict::Disproved, quote, lines)
                }
                ClaimVerdict::Unclear { protocol_violation } => {
                    if protocol_violation {
                        f.flags.insert(Flag::ProtocolViolation);
                    }
                    VerdictRecord::new(f, 3, Verdict::Uncertain, "claim-first", Vec::new())
                }
            };
            rec.reasoner_used = true;
            rec
        }
    }
}

/// Concatenation lines of the mentioned functions that contain the quote.
fn quote_lines(ctx: &PipelineContext, f: &Finding, quote: &str) -> Vec<usize> {
    let needle = crate::types::normalize_ws(quote.lines().next().unwrap_or("").split_once('|').map_or(quote, |(_, t)| t));
    if needle.is_empty() {
        return Vec::new();
    }
    evidence::mentioned_functions(f, ctx.ccim)
        .iter()
        .filter_map(|g| ctx.ccim.record(g))
        .flat_map(|r| r.src.0..=r.src.1)
        .filter(|&l| ctx.source.line_text(l).is_some_and(|t| crate::types::normalize_ws(t).contains(&needle)))
        .collect()
}

pub const SVE_CHECKS: [&str; 8] = [
    "reentrancy-guarded",
    "fund-theft-no-funds",
    "state-corruption-readonly",
    "access-admin-guarded",
    "overflow-checked",
    "function-exists",
    "evidence-in-span",
    "external-call-absent",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelConfig {
    pub stage3: bool,
    pub sve_checks: [bool; 8],
    pub sve_layer2: bool,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        FunnelConfig {
            stage3: true,
            sve_checks: [true; 8],
            sve_layer2: true,
        }
    }
}

/// The eight deterministic checks; the first failing check disproves.
pub fn sve_layer1(f: &Finding, ccim: &CcimModel, source: &ingest::AuditSource, enabled: &[bool; 8]) -> VerdictRecord {
    let text = f.claim_text();
    let rs = all_resolved(f, ccim);
    let claim = claims::classify_claim(f);
    let fail = |i: usize, lines: Vec<usize>| VerdictRecord::new(f, 5, Verdict::Disproved, SVE_CHECKS[i], lines);

    let checks: [&dyn Fn() -> Option<Vec<usize>>; 8] = [
        &|| (claim == ClaimType::Reentrancy).then(|| rs.as_deref().and_then(reentrancy_guard_lines)).flatten(),
        &|| {
            let claimed = f.impact() == ImpactClass::FundTheft || claims::any_of(&text, claims::FUND_THEFT);
            let rs = rs.as_deref()?;
            let none = rs.iter().all(|r| !ccim.footprints.get(&r.fn_ref()).is_some_and(|p| p.fund));
            (claimed && none).then(|| heads(rs))
        },
        &|| {
            let claimed = f.impact() == ImpactClass::StateCorruption || claims::any_of(&text, claims::STATE_CORRUPTION);
            let rs = rs.as_deref()?;
            let ro = rs.iter().all(|r| matches!(r.mutability, Mutability::View | Mutability::Pure));
            (claimed && ro).then(|| heads(rs))
        },
        &|| (claim == ClaimType::MissingAccessControl).then(|| rs.as_deref().and_then(|rs| admin_lines(ccim, rs))).flatten(),
        &|| {
            let rs = rs.as_deref()?;
            (claim == ClaimType::IntegerOverflowGe08 && checked_arithmetic(source, rs)).then(|| heads(rs))
        },
        &|| f.affected_functions.iter().any(|g| ccim.record(g).is_none()).then(Vec::new),
        &|| {
            let spans = resolved(f, ccim);
            if spans.is_empty() {
                return None;
            }
            let outside: Vec<usize> = f.evidence_lines.iter().copied().filter(|&l| !spans.iter().any(|r| r.contains_line(l))).collect();
            (!outside.is_empty()).then_some(outside)
        },
        &|| {
            let rs = rs.as_deref()?;
            let claimed = claims::any_of(&text, claims::EXTERNAL_CALL);
            (claimed && rs.iter().all(|r| !r.has_external_interaction())).then(|| heads(rs))
        },
    ];
    for (i, check) in checks.iter().enumerate() {
        if !enabled[i] {
            continue;
        }
        if let Some(lines) = check() {
            return fail(i, lines);
        }
    }
    VerdictRecord::passed(f, 5)
}

pub fn sve_layer2_prompt(ctx: &PipelineContext, f: &Finding, block: &evidence::SourceBlock) -> String {
    let cited: String = f
        .evidence_lines
        .iter()
        .filter_map(|&l| ctx.source.line_text(l).map(|t| format!("{l:>5} | {t}\n")))
        .collect();
    prompts::render(
        prompts::SVE_L2,
        &[
            ("id", &f.id),
            ("title", &f.title),
            ("severity", f.severity.as_str()),
            ("description", &f.description),
            ("evidence", if cited.is_empty() { "none cited\n" } else { &cited }),
            ("source", &block.text),
        ],
    )
}

/// Final evidence-packaged reasoner verdict. UNCERTAIN findings stay in the
/// report flagged as unverified.
pub fn sve_layer2(ctx: &PipelineContext, f: &mut Finding) -> VerdictRecord {
    let block = dd::claim_source(f, ctx.ccim, ctx.cfg.char_budget);
    let req = ReasonerRequest::new(stage::SVE_L2, schema::SVE, sve_layer2_prompt(ctx, f, &block), ctx.cfg.prompt_budget);
    let payload = match ask(ctx.reasoner, &req).map(|r| r.payload) {
        Ok(Ok(p)) => Some(p),
        Ok(Err(e)) => {
            log::warn!("verdict engine on {}: unparseable output ({})", f.id, e.0);
            None
        }
        Err(e) => {
            log::warn!("verdict engine on {}: {e}", f.id);
            None
        }
    };
    let verdict = payload.as_ref().and_then(|p| p.get("verdict")).and_then(Value::as_str).unwrap_or("").trim().to_ascii_uppercase();
    let argument = payload.as_ref().and_then(|p| p.get("argument")).and_then(Value::as_str).unwrap_or("").to_string();
    let quote = payload.as_ref().and_then(|p| p.get("quote")).and_then(Value::as_str).unwrap_or("").to_string();
    let mut rec = match verdict.as_str() {
        "VERIFIED" | "CONFIRMED" => {
            f.flags.remove(&Flag::Unverified);
            VerdictRecord::new(f, 5, Verdict::Confirmed, argument, Vec::new())
        }
        "DISPROVED" if block.contains_quote(&quote) => {
            let lines = quote_lines(ctx, f, &quote);
            VerdictRecord::new(f, 5, Verdict::Disproved, quote, lines)
        }
        _ => {
            f.flags.insert(Flag::Unverified);
            VerdictRecord::new(f, 5, Verdict::Uncertain, argument, Vec::new())
        }
    };
    rec.reasoner_used = true;
    rec
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub input: usize,
    pub output: usize,
    pub tallies: BTreeMap<Verdict, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStats {
    pub input: usize,
    pub output: usize,
    pub stages: Vec<StageStats>,
    pub records: Vec<VerdictRecord>,
}

impl FunnelStats {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

fn barrier(
    name: &str,
    findings: Vec<Finding>,
    stats: &mut FunnelStats,
    step: impl Fn(&mut Finding) -> VerdictRecord + Sync + Send,
) -> Vec<Finding> {
    let input = findings.len();
    let results: Vec<(Finding, VerdictRecord)> = findings
        .into_par_iter()
        .map(|mut f| {
            let r = step(&mut f);
            (f, r)
        })
        .collect();
    let mut tallies = BTreeMap::new();
    let mut kept = Vec::new();
    for (f, r) in results {
        *tallies.entry(r.verdict).or_insert(0) += 1;
        if !r.verdict.removes() {
            kept.push(f);
        }
        stats.records.push(r);
    }
    stats.stages.push(StageStats {
        stage: name.to_string(),
        input,
        output: kept.len(),
        tallies,
    });
    kept
}

/// The full funnel over a merged set. The merged confidence is read back
/// first since scoring happened at merge; stage 4 only records it. Output
/// order follows the input.
pub fn run_funnel(merged: &MergedFindingSet, ctx: &PipelineContext, fcfg: &FunnelConfig) -> (Vec<Finding>, FunnelStats) {
    let mut stats = FunnelStats {
        input: merged.findings.len(),
        ..FunnelStats::default()
    };
    let mut f = merged.findings.clone();
    for x in &mut f {
        if let Some(&c) = merged.conf_post.get(&x.id) {
            x.confidence = c;
        }
    }
    let f = barrier(stage::STAGE1, f, &mut stats, |f| stage1_verify(f, ctx.ccim, ctx.source));
    let f = barrier(stage::STAGE2, f, &mut stats, |f| stage2_filter(f, ctx.ccim));
    let f = if fcfg.stage3 { barrier(stage::STAGE3, f, &mut stats, |f| stage3_route_and_verify(ctx, f)) } else { f };
    let f = barrier("stage4", f, &mut stats, |f| {
        let cross = f.has_flag(Flag::CrossPipeline);
        VerdictRecord::new(f, 4, Verdict::Passed, if cross { "cross-pipeline" } else { "" }, Vec::new())
    });
    let f = barrier(stage::SVE_L1, f, &mut stats, |f| sve_layer1(f, ctx.ccim, ctx.source, &fcfg.sve_checks));
    let f = if fcfg.sve_layer2 { barrier(stage::SVE_L2, f, &mut stats, |f| sve_layer2(ctx, f)) } else { f };
    stats.output = f.len();
    (f, stats)
}

/// A merged set restricted to `survivors`, for re-running the funnel.
pub fn restrict(merged: &MergedFindingSet, survivors: &[Finding]) -> MergedFindingSet {
    let ids: std::collections::BTreeSet<&str> = survivors.iter().map(|f| f.id.as_str()).collect();
    let mut out = merged.clone();
    out.findings = survivors.to_vec();
    out.pi.retain(|k, _| ids.contains(k.as_str()));
    out.conf_post.retain(|k, _| ids.contains(k.as_str()));
    out
}
