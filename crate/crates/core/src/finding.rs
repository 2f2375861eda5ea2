//! Findings produced by the audit pipelines and their structural cards.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{ImpactKeywords, IMPACT_KEYWORDS};
use crate::ccim::CcimModel;
use crate::types::{FnRef, Pipeline, Severity};

pub const CONF_MIN: f64 = 0.05;
pub const CONF_MAX: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpactClass {
    FundTheft,
    FundFreeze,
    StateCorruption,
    PrivilegeEscalation,
    Dos,
    Info,
}

impl ImpactClass {
    pub const ALL: [ImpactClass; 6] = [
        ImpactClass::FundTheft,
        ImpactClass::FundFreeze,
        ImpactClass::StateCorruption,
        ImpactClass::PrivilegeEscalation,
        ImpactClass::Dos,
        ImpactClass::Info,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ImpactClass::FundTheft => "fund-theft",
            ImpactClass::FundFreeze => "fund-freeze",
            ImpactClass::StateCorruption => "state-corruption",
            ImpactClass::PrivilegeEscalation => "privilege-escalation",
            ImpactClass::Dos => "dos",
            ImpactClass::Info => "info",
        }
    }

    pub fn parse(s: &str) -> Option<ImpactClass> {
        ImpactClass::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ImpactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerRole {
    Unauthenticated,
    User,
    Admin,
    Contract,
}

impl fmt::Display for AttackerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerRole::Unauthenticated => "unauthenticated",
            AttackerRole::User => "user",
            AttackerRole::Admin => "admin",
            AttackerRole::Contract => "contract",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructuralCard {
    pub vulnerable_function: FnRef,
    pub abused_state_variable: Option<String>,
    pub attacker_role: AttackerRole,
    pub impact_class: ImpactClass,
    /// No affected function resolved; the function is a placeholder.
    #[serde(default)]
    pub low_fidelity: bool,
}

impl StructuralCard {
    /// The clustering key: attacker role is not part of it.
    pub fn root_cause(&self) -> (&FnRef, Option<&str>, ImpactClass) {
        (&self.vulnerable_function, self.abused_state_variable.as_deref(), self.impact_class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    AdminTrust,
    VectorConfirmed,
    CrossPipeline,
    SelfContradictory,
    ProtocolViolation,
    Unverified,
    LowFidelity,
    AccessEvidenceCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub pipeline: Pipeline,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub attack_scenario: String,
    pub severity: Severity,
    pub affected_functions: Vec<FnRef>,
    #[serde(default)]
    pub evidence_lines: Vec<usize>,
    pub confidence: f64,
    #[serde(default)]
    pub card: Option<StructuralCard>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
    #[serde(default)]
    pub proof_trace: String,
    /// Stage tag of the phase that produced the finding.
    #[serde(default)]
    pub origin: String,
    /// Deterministic signals the finding rests on.
    #[serde(default)]
    pub signal_ids: Vec<String>,
    /// Matching finding ids from the other pipeline.
    #[serde(default)]
    pub related: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Finding {
    pub fn new(pipeline: Pipeline, title: &str, severity: Severity, affected: Vec<FnRef>) -> Self {
        Finding {
            id: String::new(),
            pipeline,
            title: title.to_string(),
            description: String::new(),
            attack_scenario: String::new(),
            severity,
            affected_functions: affected,
            evidence_lines: Vec::new(),
            confidence: base_confidence(&ScoringConfig::default(), severity, 0),
            card: None,
            flags: BTreeSet::new(),
            proof_trace: String::new(),
            origin: String::new(),
            signal_ids: Vec::new(),
            related: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Title, description, scenario and trace, lowercased.
    pub fn text(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}",
            self.title, self.description, self.attack_scenario, self.proof_trace
        )
        .to_lowercase()
    }

    /// Title and description only: the finding's claim.
    pub fn claim_text(&self) -> String {
        format!("{}\n{}", self.title, self.description).to_lowercase()
    }

    pub fn has_flag(&self, f: Flag) -> bool {
        self.flags.contains(&f)
    }

    pub fn impact(&self) -> ImpactClass {
        self.card
            .as_ref()
            .map_or_else(|| classify_impact(&self.text(), &IMPACT_KEYWORDS), |c| c.impact_class)
    }
}

/// Base-confidence parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub prior_critical: f64,
    pub prior_high: f64,
    pub prior_medium: f64,
    pub prior_low: f64,
    pub prior_info: f64,
    pub per_signal: f64,
    pub max_signals: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            prior_critical: 0.6,
            prior_high: 0.5,
            prior_medium: 0.4,
            prior_low: 0.3,
            prior_info: 0.2,
            per_signal: 0.1,
            max_signals: 3,
        }
    }
}

impl ScoringConfig {
    pub fn prior(&self, s: Severity) -> f64 {
        match s {
            Severity::Critical => self.prior_critical,
            Severity::High => self.prior_high,
            Severity::Medium => self.prior_medium,
            Severity::Low => self.prior_low,
            Severity::Info => self.prior_info,
        }
    }
}

/// clamp(0.05, 0.95, prior(severity) + per_signal · min(max_signals, n)).
pub fn base_confidence(cfg: &ScoringConfig, severity: Severity, corroborating: usize) -> f64 {
    let raw = cfg.prior(severity) + cfg.per_signal * corroborating.min(cfg.max_signals) as f64;
    raw.clamp(CONF_MIN, CONF_MAX)
}

/// First impact class whose keyword occurs in `lower`; `info` otherwise.
/// Keywords match at a word start; keywords of three characters or fewer
/// must match a whole word.
pub fn classify_impact(lower: &str, table: &ImpactKeywords) -> ImpactClass {
    let hit = |k: &str| if k.len() <= 3 { contains_word(lower, k) } else { contains_word_prefix(lower, k) };
    table
        .classes
        .iter()
        .find(|c| c.keywords.iter().any(|k| hit(k)))
        .and_then(|c| ImpactClass::parse(&c.class))
        .unwrap_or(ImpactClass::Info)
}

/// Does `needle` occur in `hay` starting at a word boundary?
pub fn contains_word_prefix(hay: &str, needle: &str) -> bool {
    let bytes = hay.as_bytes();
    hay.match_indices(needle).any(|(i, _)| {
        i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_')
    })
}

/// Does `needle` occur in `hay` as a whole word?
pub fn contains_word(hay: &str, needle: &str) -> bool {
    let bytes = hay.as_bytes();
    hay.match_indices(needle).any(|(i, m)| {
        let end = i + m.len();
        let before = i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        let after = end >= bytes.len() || !(bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_');
        before && after
    })
}

/// Resolve a function name from reasoner output against the model. Bare
/// names resolve when unambiguous; unresolvable names are kept as given.
pub fn resolve_fn(ccim: &CcimModel, name: &str) -> Option<FnRef> {
    let parsed: FnRef = name.parse().ok()?;
    let key = if parsed.owner.is_empty() { parsed.name.clone() } else { parsed.to_string() };
    if let Some(r) = ccim.lookup(&key) {
        return Some(r.fn_ref());
    }
    if !parsed.owner.is_empty() && ccim.contract(&parsed.owner).is_none() {
        if let Some(r) = ccim.lookup(&parsed.name) {
            return Some(r.fn_ref());
        }
    }
    Some(parsed)
}

fn as_text(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

/// Line numbers from a number, a numeric string or an array of either.
pub fn parse_lines(v: Option<&Value>) -> Vec<usize> {
    let one = |x: &Value| -> Option<usize> {
        match x {
            Value::Number(n) => n.as_u64().map(|n| n as usize),
            Value::String(s) => s.trim().trim_start_matches(['L', 'l']).parse().ok(),
            _ => None,
        }
    };
    let mut out: Vec<usize> = match v {
        Some(Value::Array(items)) => items.iter().filter_map(one).collect(),
        Some(x) => one(x).into_iter().collect(),
        None => Vec::new(),
    };
    out.retain(|&l| l > 0);
    out.sort_unstable();
    out.dedup();
    out
}

/// Build a finding from a reasoner JSON object. `fallback` supplies the
/// affected function when the object names none; a finding with no
/// affected function at all is rejected.
pub fn finding_from_json(
    v: &Value,
    pipeline: Pipeline,
    origin: &str,
    ccim: &CcimModel,
    fallback: &[FnRef],
    default_severity: Severity,
) -> Option<Finding> {
    let title = as_text(v.get("title"));
    let mut affected: Vec<FnRef> = match v.get("affected_functions") {
        Some(Value::Array(a)) => a
            .iter()
            .filter_map(|x| x.as_str())
            .filter_map(|s| resolve_fn(ccim, s))
            .collect(),
        Some(Value::String(s)) => resolve_fn(ccim, s).into_iter().collect(),
        _ => Vec::new(),
    };
    if affected.is_empty() {
        affected = fallback.to_vec();
    }
    let mut seen = BTreeSet::new();
    affected.retain(|f| seen.insert(f.clone()));
    if affected.is_empty() {
        log::warn!("{origin}: dropping finding `{title}` without affected functions");
        return None;
    }
    let severity = v
        .get("severity")
        .and_then(Value::as_str)
        .and_then(Severity::parse_loose)
        .unwrap_or(default_severity);
    let mut evidence = parse_lines(v.get("evidence_lines"));
    evidence.extend(parse_lines(v.get("evidence_line")));
    evidence.sort_unstable();
    evidence.dedup();
    let mut f = Finding::new(pipeline, if title.is_empty() { "Untitled finding" } else { &title }, severity, affected);
    f.description = as_text(v.get("description"));
    f.attack_scenario = as_text(v.get("attack_scenario"));
    f.proof_trace = {
        let t = as_text(v.get("proof_trace"));
        if t.is_empty() { as_text(v.get("exploit_trace")) } else { t }
    };
    f.evidence_lines = evidence;
    f.origin = origin.to_string();
    Some(f)
}

/// Assign `D-001`, `D-002`, ... in the current order.
pub fn renumber(findings: &mut [Finding], pipeline: Pipeline) {
    for (i, f) in findings.iter_mut().enumerate() {
        f.pipeline = pipeline;
        f.id = format!("{}-{:03}", pipeline.id_prefix(), i + 1);
    }
}

/// Canonical order before renumbering: first function, severity, origin, title.
pub fn canonical_order(findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        a.affected_functions
            .first()
            .cmp(&b.affected_functions.first())
            .then_with(|| b.severity.cmp(&a.severity))
            .then_with(|| a.origin.cmp(&b.origin))
            .then_with(|| a.title.cmp(&b.title))
            .then_with(|| a.evidence_lines.cmp(&b.evidence_lines))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_confidence_is_clamped() {
        let c = ScoringConfig::default();
        assert_eq!(base_confidence(&c, Severity::High, 0), 0.5);
        assert!((base_confidence(&c, Severity::Critical, 10) - 0.9).abs() < 1e-12);
        assert_eq!(base_confidence(&c, Severity::Info, 0), 0.2);
    }

    #[test]
    fn impact_keywords() {
        let t = &*IMPACT_KEYWORDS;
        assert_eq!(classify_impact("reentrancy in withdraw lets an attacker drain", t), ImpactClass::FundTheft);
        assert_eq!(classify_impact("funds become permanently locked", t), ImpactClass::FundFreeze);
        assert_eq!(classify_impact("style nit", t), ImpactClass::Info);
        assert_eq!(classify_impact("a dosage", t), ImpactClass::Info);
    }

    #[test]
    fn json_conversion_resolves_names() {
        let src = crate::ingest::AuditSource::single("A.sol", "contract A {\n    function f() external {}\n}\n");
        let m = crate::ccim::build(&src);
        let v: Value = serde_json::json!({"title": "t", "severity": "high", "affected_functions": ["f", "ghost"], "evidence_lines": [2, "2"]});
        let f = finding_from_json(&v, Pipeline::D, "x", &m, &[], Severity::Low).unwrap();
        assert_eq!(f.affected_functions, vec![FnRef::new("A", "f"), FnRef::new("", "ghost")]);
        assert_eq!(f.evidence_lines, vec![2]);
        assert_eq!(f.severity, Severity::High);
        assert!(finding_from_json(&serde_json::json!({"title": "t"}), Pipeline::D, "x", &m, &[], Severity::Low).is_none());
    }
}
