//! The reasoning backend interface and its offline implementations.
//!
//! Every LLM-bearing stage talks to a [`Reasoner`]. The scripted
//! [`MockReasoner`] answers from a versioned JSON table so whole runs are
//! reproducible; [`OfflineReasoner`] refuses every call.
//!
//! Mock script format (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "first_call_delay_ms": {"dd": 400, "id": 300},
//!   "timeout_ms": 10000,
//!   "rules": [
//!     {"stage": "phase_a", "contains": ["withdraw"], "response": {"items": []}},
//!     {"stage": "sve_l2", "raw": "not json"},
//!     {"stage": "phase_d", "error": "transport"}
//!   ]
//! }
//! ```
//!
//! Rules are tried in order; the first whose `stage` (and optional
//! `schema`) equals the request's and whose `contains` substrings all occur
//! in the prompt wins. Unmatched requests get the schema's empty default.
//! `first_call_delay_ms` delays the first call of each pipeline (`dd` for
//! `phase_*` stages, `id` for `id_*` stages).

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Stage tags.
pub mod stage {
    pub const PHASE_A: &str = "phase_a";
    pub const PHASE_B: &str = "phase_b";
    pub const PHASE_C: &str = "phase_c";
    pub const PHASE_D: &str = "phase_d";
    pub const PHASE_E: &str = "phase_e";
    pub const ID_TRIAGE: &str = "id_triage";
    pub const ID_SPEC: &str = "id_spec";
    pub const ID_VERIFY: &str = "id_verify";
    pub const ID_STANDALONE: &str = "id_standalone";
    pub const STAGE1: &str = "stage1";
    pub const STAGE2: &str = "stage2";
    pub const STAGE3: &str = "stage3";
    pub const SVE_L1: &str = "sve_l1";
    pub const SVE_L2: &str = "sve_l2";
    pub const BLIND_SPOT: &str = "blind_spot";
    pub const GAP_REAUDIT: &str = "gap_reaudit";
}

/// Response schema ids.
pub mod schema {
    pub const CHECKLIST: &str = "phase_a";
    pub const FINDINGS: &str = "findings";
    pub const INTERACTIONS: &str = "phase_c";
    pub const CLAIM_FIRST: &str = "claim_first";
    pub const RECALIBRATE: &str = "recalibrate";
    pub const PAIR_TRIAGE: &str = "pair_triage";
    pub const BEHAVIOR_SPEC: &str = "behavior_spec";
    pub const SPEC_VERIFY: &str = "spec_verify";
    pub const SVE: &str = "sve_l2";
}

/// Schema-valid empty payload, read by callers as UNCLEAR / nothing found.
pub fn default_payload(schema_id: &str) -> Value {
    match schema_id {
        schema::CHECKLIST => json!({"items": []}),
        schema::INTERACTIONS => json!({"verdicts": []}),
        schema::CLAIM_FIRST => json!({"claim": "", "prevention": "", "quote": "", "verdict": "UNCLEAR"}),
        schema::RECALIBRATE => json!({"severity": null, "justification": ""}),
        schema::PAIR_TRIAGE => json!({"pairs": []}),
        schema::BEHAVIOR_SPEC => json!({"lifecycle": "", "agreed_variables": [], "assumptions": []}),
        schema::SPEC_VERIFY => json!({"items": [], "verdict": "UNCLEAR"}),
        schema::SVE => json!({"verdict": "UNCERTAIN", "argument": ""}),
        _ => json!({"findings": []}),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub stage: String,
    pub prompt: String,
    pub schema: String,
    /// Character budget for the prompt.
    pub budget: usize,
}

impl ReasonerRequest {
    pub fn new(stage: &str, schema: &str, prompt: String, budget: usize) -> Self {
        ReasonerRequest {
            stage: stage.to_string(),
            prompt,
            schema: schema.to_string(),
            budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("unparseable reasoner output: {0}")]
pub struct ParseFailure(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerResponse {
    pub raw: String,
    pub payload: Result<Value, ParseFailure>,
}

impl ReasonerResponse {
    pub fn from_raw(raw: String) -> Self {
        let payload = extract_json(&raw);
        ReasonerResponse { raw, payload }
    }
}

/// Parse the first JSON object embedded in `raw`.
pub fn extract_json(raw: &str) -> Result<Value, ParseFailure> {
    if let Ok(v) = serde_json::from_str::<Value>(raw.trim()) {
        if v.is_object() {
            return Ok(v);
        }
    }
    let start = raw.find('{').ok_or_else(|| ParseFailure("no JSON object".into()))?;
    let end = raw.rfind('}').ok_or_else(|| ParseFailure("no JSON object".into()))?;
    if end < start {
        return Err(ParseFailure("no JSON object".into()));
    }
    serde_json::from_str(&raw[start..=end]).map_err(|e| ParseFailure(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReasonerError {
    #[error("reasoner timed out on {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("prompt of {len} characters exceeds budget {budget}")]
    BudgetExceeded { len: usize, budget: usize },
    #[error("no reasoner backend available")]
    Unavailable,
}

pub trait Reasoner: Send + Sync {
    fn respond(&self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError>;

    /// Calls received for `stage` since construction.
    fn call_count(&self, stage: &str) -> usize;

    fn total_calls(&self) -> usize;
}

/// Call `reasoner`, converting a panicking backend into a transport error.
pub fn ask(reasoner: &dyn Reasoner, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
    catch_unwind(AssertUnwindSafe(|| reasoner.respond(request)))
        .unwrap_or_else(|_| Err(ReasonerError::Transport("backend panicked".into())))
}

#[derive(Debug, Default)]
struct Counters {
    calls: Mutex<BTreeMap<String, usize>>,
}

impl Counters {
    fn bump(&self, stage: &str) {
        let mut c = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        *c.entry(stage.to_string()).or_default() += 1;
    }

    fn get(&self, stage: &str) -> usize {
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(stage)
            .copied()
            .unwrap_or(0)
    }

    fn total(&self) -> usize {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub stage: String,
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub response: Option<Value>,
    #[serde(default)]
    pub raw: Option<String>,
    #[serde(default)]
    pub delay_ms: Option<u64>,
    /// `timeout`, `transport` or `unavailable`.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub version: u32,
    #[serde(default)]
    pub first_call_delay_ms: BTreeMap<String, u64>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            version: 1,
            first_call_delay_ms: BTreeMap::new(),
            timeout_ms: None,
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed mock script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported mock script version {0}")]
    Version(u32),
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: MockScript = serde_json::from_str(text)?;
        if s.version != 1 {
            return Err(ScriptError::Version(s.version));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}

/// Pipeline key of a stage tag for first-call delays.
fn pipeline_of(stage: &str) -> &'static str {
    if stage.starts_with("phase_") {
        "dd"
    } else if stage.starts_with("id_") {
        "id"
    } else {
        "other"
    }
}

#[derive(Debug, Default)]
pub struct MockReasoner {
    script: MockScript,
    counters: Counters,
    delayed: Mutex<BTreeSet<&'static str>>,
}

impl MockReasoner {
    pub fn new(script: MockScript) -> Self {
        MockReasoner {
            script,
            counters: Counters::default(),
            delayed: Mutex::new(BTreeSet::new()),
        }
    }

    fn rule_for(&self, req: &ReasonerRequest) -> Option<&MockRule> {
        self.script.rules.iter().find(|r| {
            r.stage == req.stage
                && r.schema.as_ref().is_none_or(|s| *s == req.schema)
                && r.contains.iter().all(|c| req.prompt.contains(c.as_str()))
        })
    }

    fn sleep(&self, stage: &str, ms: u64) -> Result<(), ReasonerError> {
        match self.script.timeout_ms {
            Some(t) if ms > t => {
                std::thread::sleep(Duration::from_millis(t));
                Err(ReasonerError::Timeout(stage.to_string()))
            }
            _ => {
                std::thread::sleep(Duration::from_millis(ms));
                Ok(())
            }
        }
    }
}

impl Reasoner for MockReasoner {
    fn respond(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        self.counters.bump(&req.stage);
        if req.prompt.chars().count() > req.budget {
            return Err(ReasonerError::BudgetExceeded {
                len: req.prompt.chars().count(),
                budget: req.budget,
            });
        }
        let pipeline = pipeline_of(&req.stage);
        let first = self
            .delayed
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(pipeline);
        if first {
            if let Some(&ms) = self.script.first_call_delay_ms.get(pipeline) {
                self.sleep(&req.stage, ms)?;
            }
        }
        let Some(rule) = self.rule_for(req) else {
            return Ok(ReasonerResponse::from_raw(default_payload(&req.schema).to_string()));
        };
        if let Some(ms) = rule.delay_ms {
            self.sleep(&req.stage, ms)?;
        }
        match rule.error.as_deref() {
            Some("timeout") => return Err(ReasonerError::Timeout(req.stage.clone())),
            Some("unavailable") => return Err(ReasonerError::Unavailable),
            Some(e) => return Err(ReasonerError::Transport(e.to_string())),
            None => {}
        }
        let raw = match (&rule.raw, &rule.response) {
            (Some(raw), _) => raw.clone(),
            (None, Some(v)) => v.to_string(),
            (None, None) => default_payload(&req.schema).to_string(),
        };
        Ok(ReasonerResponse::from_raw(raw))
    }

    fn call_count(&self, stage: &str) -> usize {
        self.counters.get(stage)
    }

    fn total_calls(&self) -> usize {
        self.counters.total()
    }
}

/// A backend that is never available.
#[derive(Debug, Default)]
pub struct OfflineReasoner {
    counters: Counters,
}

impl Reasoner for OfflineReasoner {
    fn respond(&self, req: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        self.counters.bump(&req.stage);
        Err(ReasonerError::Unavailable)
    }

    fn call_count(&self, stage: &str) -> usize {
        self.counters.get(stage)
    }

    fn total_calls(&self) -> usize {
        self.counters.total()
    }
}

/// Truncate `s` to at most `budget` characters on a char boundary.
pub fn truncate_chars(s: &str, budget: usize) -> String {
    s.chars().take(budget).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(stage: &str, schema: &str, prompt: &str) -> ReasonerRequest {
        ReasonerRequest::new(stage, schema, prompt.to_string(), 1000)
    }

    #[test]
    fn scripted_response_is_verbatim() {
        let script = MockScript::from_json(
            r#"{"version": 1, "rules": [{"stage": "phase_a", "contains": ["withdraw"], "response": {"items": [{"id": "x", "verdict": "REAL", "evidence_line": 3}]}}]}"#,
        )
        .unwrap();
        let m = MockReasoner::new(script);
        let r = m.respond(&req("phase_a", schema::CHECKLIST, "check withdraw")).unwrap();
        assert_eq!(r.payload.unwrap()["items"][0]["verdict"], "REAL");
        assert_eq!(m.call_count("phase_a"), 1);
        let d = m.respond(&req("phase_a", schema::CHECKLIST, "check deposit")).unwrap();
        assert_eq!(d.payload.unwrap(), default_payload(schema::CHECKLIST));
        assert_eq!(m.call_count("phase_a"), 2);
        assert_eq!(m.call_count("stage1"), 0);
    }

    #[test]
    fn budget_and_errors_are_distinct() {
        let m = MockReasoner::new(
            MockScript::from_json(r#"{"version": 1, "rules": [{"stage": "phase_d", "error": "transport"}, {"stage": "sve_l2", "raw": "nonsense"}]}"#).unwrap(),
        );
        let big = ReasonerRequest::new("phase_a", schema::CHECKLIST, "x".repeat(11), 10);
        assert!(matches!(m.respond(&big), Err(ReasonerError::BudgetExceeded { .. })));
        assert!(matches!(m.respond(&req("phase_d", schema::CLAIM_FIRST, "")), Err(ReasonerError::Transport(_))));
        assert!(m.respond(&req("sve_l2", schema::SVE, "")).unwrap().payload.is_err());
        assert_eq!(OfflineReasoner::default().respond(&req("x", "y", "")), Err(ReasonerError::Unavailable));
    }

    #[test]
    fn versions_are_checked_and_json_is_extracted() {
        assert!(matches!(MockScript::from_json(r#"{"version": 2}"#), Err(ScriptError::Version(2))));
        let v = extract_json("Here you go: {\"a\": 1} done").unwrap();
        assert_eq!(v["a"], 1);
    }
}
