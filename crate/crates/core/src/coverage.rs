//! Recall-side checks: protocol-feature gap reporting, the keyword coverage
//! map and the attention residual over the function inventory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::catalog::{compile_all, CoverageClasses, Feature, FeatureCatalogue};
use crate::ccim::{CcimModel, FunctionRecord};
use crate::evidence;
use crate::finding::{contains_word, Finding};
use crate::prompts;
use crate::types::FnRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedFeature {
    pub id: String,
    pub name: String,
    pub extension: bool,
    /// What matched: `function X.f`, `modifier m`, `state T v`.
    pub evidence: Vec<String>,
}

fn type_strings(ccim: &CcimModel) -> Vec<String> {
    ccim.in_scope_contracts()
        .flat_map(|c| c.state_vars.iter().map(|v| format!("{} {}", v.ty, v.name)))
        .collect()
}

fn modifier_names(ccim: &CcimModel) -> BTreeSet<String> {
    let defs = ccim.in_scope_contracts().flat_map(|c| c.modifiers.iter().map(|m| m.name.clone()));
    let uses = ccim.records.iter().flat_map(|r| r.modifiers.iter().map(|m| m.name.clone()));
    defs.chain(uses).collect()
}

fn in_scope_records(ccim: &CcimModel) -> impl Iterator<Item = &FunctionRecord> {
    ccim.records.iter().filter(|r| ccim.contract(&r.owner).is_some_and(|c| c.in_scope))
}

fn feature_evidence(ccim: &CcimModel, feat: &Feature) -> Vec<String> {
    let names = compile_all(&feat.name_patterns, false);
    let mods = compile_all(&feat.modifier_patterns, false);
    let types = compile_all(&feat.type_patterns, false);
    let mut ev = Vec::new();
    for r in in_scope_records(ccim) {
        let lower = r.name.to_lowercase();
        if names.iter().any(|re| re.is_match(&lower)) {
            ev.push(format!("function {}", r.fn_ref()));
        }
    }
    for m in modifier_names(ccim) {
        if mods.iter().any(|re| re.is_match(&m)) {
            ev.push(format!("modifier {m}"));
        }
    }
    for t in type_strings(ccim) {
        if types.iter().any(|re| re.is_match(&t)) {
            ev.push(format!("state {t}"));
        }
    }
    ev
}

/// A feature is present when any of its heuristics matches.
pub fn detect_features(ccim: &CcimModel, catalogue: &FeatureCatalogue) -> Vec<DetectedFeature> {
    catalogue
        .features
        .iter()
        .filter_map(|feat| {
            let evidence = feature_evidence(ccim, feat);
            (!evidence.is_empty()).then(|| DetectedFeature {
                id: feat.id.clone(),
                name: feat.name.clone(),
                extension: feat.extension,
                evidence,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHit {
    pub name: String,
    pub completion: bool,
    pub hit: bool,
    pub findings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub detected_features: Vec<DetectedFeature>,
    pub relevant_classes: BTreeSet<String>,
    pub covered_classes: BTreeSet<String>,
    pub gap_set: BTreeSet<String>,
    pub keyword_map: BTreeMap<String, ClassHit>,
}

pub fn compute_gap_set(findings: &[Finding], detected: &[DetectedFeature], catalogue: &FeatureCatalogue, classes: &CoverageClasses) -> CoverageReport {
    let texts: Vec<(String, String)> = findings.iter().map(|f| (f.id.clone(), f.text())).collect();
    let keyword_map: BTreeMap<String, ClassHit> = classes
        .classes
        .iter()
        .map(|c| {
            let hits: Vec<String> = texts
                .iter()
                .filter(|(_, t)| c.keywords.iter().any(|k| t.contains(&k.to_lowercase())))
                .map(|(id, _)| id.clone())
                .collect();
            let hit = ClassHit {
                name: c.name.clone(),
                completion: c.completion,
                hit: !hits.is_empty(),
                findings: hits,
            };
            (c.id.clone(), hit)
        })
        .collect();
    let relevant: BTreeSet<String> = detected
        .iter()
        .filter_map(|d| catalogue.features.iter().find(|f| f.id == d.id))
        .flat_map(|f| f.bug_classes.iter().cloned())
        .collect();
    let (covered, gap): (BTreeSet<String>, BTreeSet<String>) =
        relevant.iter().cloned().partition(|c| keyword_map.get(c).is_some_and(|h| h.hit));
    CoverageReport {
        detected_features: detected.to_vec(),
        relevant_classes: relevant,
        covered_classes: covered,
        gap_set: gap,
        keyword_map,
    }
}

fn state_var_type(ccim: &CcimModel, contract: &str, name: &str) -> String {
    ccim.contract(contract)
        .and_then(|c| c.state_vars.iter().find(|v| v.name == name))
        .map(|v| v.ty.clone())
        .unwrap_or_default()
}

/// Call sites whose method matches a class keyword or whose target's
/// declared type matches a type pattern of a feature carrying the class.
fn class_call_sites(ccim: &CcimModel, keywords: &[String], type_res: &[Regex]) -> Vec<String> {
    let mut out = Vec::new();
    for r in in_scope_records(ccim) {
        for c in &r.call_sites {
            let method = c.method.to_lowercase();
            let ty = format!("{} {}", state_var_type(ccim, &c.target.contract, &c.target.name), c.target.name);
            let hit = keywords.iter().any(|k| method.contains(&k.to_lowercase().replace(' ', "")))
                || type_res.iter().any(|re| re.is_match(&ty))
                || c.cast.as_ref().is_some_and(|cast| type_res.iter().any(|re| re.is_match(cast)));
            if hit {
                out.push(format!("- {} line {}: {}.{}({})", r.fn_ref(), c.line, c.target.name, c.method, c.args.join(", ")));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapPrompt {
    pub class: String,
    pub prompt: String,
}

/// One targeted re-audit prompt per gap class.
pub fn gap_reaudit_prompts(report: &CoverageReport, ccim: &CcimModel, catalogue: &FeatureCatalogue, classes: &CoverageClasses) -> Vec<GapPrompt> {
    report
        .gap_set
        .iter()
        .map(|gap| {
            let carriers: Vec<(&DetectedFeature, &Feature)> = report
                .detected_features
                .iter()
                .filter_map(|d| catalogue.features.iter().find(|f| f.id == d.id).map(|f| (d, f)))
                .filter(|(_, f)| f.bug_classes.contains(gap))
                .collect();
            let keywords = classes.get(gap).map(|c| c.keywords.clone()).unwrap_or_default();
            let type_res: Vec<Regex> = carriers.iter().flat_map(|(_, f)| compile_all(&f.type_patterns, false)).collect();
            let mut ev = String::new();
            for (d, f) in &carriers {
                let _ = writeln!(ev, "### {} (heuristics: names {:?}, modifiers {:?}, types {:?})", d.name, f.name_patterns, f.modifier_patterns, f.type_patterns);
                for e in &d.evidence {
                    let _ = writeln!(ev, "- {e}");
                }
            }
            let sites = class_call_sites(ccim, &keywords, &type_res);
            if !sites.is_empty() {
                let _ = writeln!(ev, "### Call sites");
                for s in sites {
                    let _ = writeln!(ev, "{s}");
                }
            }
            let features: Vec<&str> = carriers.iter().map(|(d, _)| d.name.as_str()).collect();
            let name = classes.get(gap).map_or(gap.as_str(), |c| c.name.as_str());
            GapPrompt {
                class: gap.clone(),
                prompt: prompts::render(
                    prompts::GAP_REAUDIT,
                    &[("class", name), ("features", &features.join(", ")), ("keywords", &keywords.join(", ")), ("evidence", &ev)],
                ),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskWeights {
    pub entry_visibility: f64,
    pub fund_flag: f64,
    pub per_write: f64,
    pub per_external_call: f64,
    /// Multiplied by the arithmetic bucket (0, 1 or 2).
    pub arithmetic_unit: f64,
    pub financial_name: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        RiskWeights {
            entry_visibility: 2.0,
            fund_flag: 3.0,
            per_write: 1.0,
            per_external_call: 2.0,
            arithmetic_unit: 1.0,
            financial_name: 2.0,
        }
    }
}

static ARITH_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\w)\]]\s*(?:\*\*|[+\-*/%])=?\s*[\w(]").unwrap());
static FINANCIAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)balance|reserve|supply|debt|collateral|share|reward|fee|price|deposit|stake|liquidity").unwrap()
});

/// Arithmetic operations in the body, bucketed: <3 is 0, <8 is 1, else 2.
pub fn arithmetic_bucket(r: &FunctionRecord) -> u8 {
    let body = r.body.split_once('{').map_or("", |(_, b)| b);
    let masked = crate::lexer::mask(body);
    match ARITH_RE.find_iter(&masked).count() {
        0..=2 => 0,
        3..=7 => 1,
        _ => 2,
    }
}

pub fn risk_profile(r: &FunctionRecord) -> f64 {
    risk_profile_with(r, &RiskWeights::default())
}

pub fn risk_profile_with(r: &FunctionRecord, w: &RiskWeights) -> f64 {
    let vis = if r.vis.is_entry() { w.entry_visibility } else { 0.0 };
    let fund = if r.fund_flag { w.fund_flag } else { 0.0 };
    let writes = w.per_write * r.writes.len() as f64;
    let calls = w.per_external_call * (r.call_sites.len() + r.low_level_calls.len()) as f64;
    let arith = w.arithmetic_unit * f64::from(arithmetic_bucket(r));
    let fin = if r.writes.iter().any(|v| FINANCIAL_RE.is_match(&v.name)) { w.financial_name } else { 0.0 };
    vis + fund + writes + calls + arith + fin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionStatus {
    Discussed,
    PartialAttention,
    Unattended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aspect {
    FundFlow,
    ExternalCalls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub function: FnRef,
    pub status: AttentionStatus,
    pub risk_score: f64,
    pub unaddressed: Vec<Aspect>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualClassification {
    /// Every function once, ranked by risk descending.
    pub entries: Vec<ResidualEntry>,
}

impl ResidualClassification {
    pub fn count(&self, s: AttentionStatus) -> usize {
        self.entries.iter().filter(|e| e.status == s).count()
    }

    /// Non-discussed functions in risk order.
    pub fn residuals(&self) -> impl Iterator<Item = &ResidualEntry> {
        self.entries.iter().filter(|e| e.status != AttentionStatus::Discussed)
    }
}

pub const FUND_TERMS: &[&str] = &["fund", "ether", "eth", "token", "transfer", "withdraw", "balance", "value", "payment", "deposit", "drain", "steal"];
pub const CALL_TERMS: &[&str] = &["call", "external", "callback", "reentran", "interaction"];

/// One document per finding: its text plus the qualified affected names.
pub fn documents_from_findings(findings: &[Finding]) -> Vec<String> {
    findings
        .iter()
        .map(|f| {
            let names: Vec<String> = f.affected_functions.iter().map(ToString::to_string).collect();
            format!("{}\n{}", f.text(), names.join(" ").to_lowercase())
        })
        .collect()
}

fn mentions(doc: &str, r: &FunctionRecord) -> bool {
    let name = r.name.to_lowercase();
    let qualified = format!("{}.{}", r.owner, r.name).to_lowercase();
    doc.contains(&qualified) || contains_word(doc, &name)
}

/// Classify every function by how the pipeline outputs attended to it. An
/// aspect counts as addressed when a document mentioning the function
/// also refers to it.
pub fn attention_residual(ccim: &CcimModel, documents: &[String]) -> ResidualClassification {
    let docs: Vec<String> = documents.iter().map(|d| d.to_lowercase()).collect();
    let mut entries: Vec<ResidualEntry> = ccim
        .records
        .iter()
        .map(|r| {
            let near: Vec<&String> = docs.iter().filter(|d| mentions(d, r)).collect();
            let mut unaddressed = Vec::new();
            if r.fund_flag && !near.iter().any(|d| FUND_TERMS.iter().any(|t| contains_word_start(d, t))) {
                unaddressed.push(Aspect::FundFlow);
            }
            let methods: Vec<String> = r.call_sites.iter().map(|c| c.method.to_lowercase()).collect();
            if r.has_external_interaction()
                && !near.iter().any(|d| CALL_TERMS.iter().any(|t| d.contains(t)) || methods.iter().any(|m| contains_word(d, m)))
            {
                unaddressed.push(Aspect::ExternalCalls);
            }
            let status = if near.is_empty() {
                AttentionStatus::Unattended
            } else if unaddressed.is_empty() {
                AttentionStatus::Discussed
            } else {
                AttentionStatus::PartialAttention
            };
            if status == AttentionStatus::Unattended {
                unaddressed.clear();
            }
            ResidualEntry {
                function: r.fn_ref(),
                status,
                risk_score: risk_profile(r),
                unaddressed,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.risk_score.total_cmp(&a.risk_score).then_with(|| a.function.cmp(&b.function)));
    ResidualClassification { entries }
}

fn contains_word_start(hay: &str, w: &str) -> bool {
    crate::finding::contains_word_prefix(hay, w)
}

/// The blind-spot review prompt over the `top` riskiest residuals, built
/// from the source alone.
pub fn blind_spot_prompt(ccim: &CcimModel, residual: &ResidualClassification, top: usize) -> Option<String> {
    let mut body = String::new();
    for e in residual.residuals().take(top) {
        let Some(r) = ccim.record(&e.function) else { continue };
        let _ = writeln!(body, "### {} ({:?}, risk {:.1})\n{}\n{}", e.function, e.status, e.risk_score, evidence::facts(ccim, r), evidence::numbered(r));
    }
    (!body.is_empty()).then(|| prompts::render(prompts::BLIND_SPOT, &[("functions", &body)]))
}
