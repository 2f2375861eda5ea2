//! Adapter for normalized external-tool reports.
//!
//! The accepted schema is either a JSON array of findings or an object with
//! a `findings` array. Each finding has a `detector` id, a `description`, a
//! `severity` string, an optional `file` (original path) and an optional
//! `line`. When `file` is present the line is an original-file line and is
//! translated to the concatenation; otherwise it already is one. `function`
//! (`Owner.name`) and `confidence` are optional.

use std::path::Path;

use serde::Deserialize;

use super::{Engine, Signal};
use crate::ccim::CcimModel;
use crate::ingest::AuditSource;
use crate::types::{FnRef, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalTool {
    Slither,
    Mythril,
}

impl ExternalTool {
    pub fn tag(self) -> Engine {
        match self {
            ExternalTool::Slither => Engine::Sli,
            ExternalTool::Mythril => Engine::Myt,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Entry {
    detector: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    severity: String,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    line: Option<usize>,
    #[serde(default)]
    function: Option<String>,
    #[serde(default)]
    confidence: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Report {
    List(Vec<Entry>),
    Wrapped { findings: Vec<Entry> },
}

/// Parse a report; a missing or malformed file yields `[]` and a warning.
pub fn ingest_external(path: &Path, tool: ExternalTool, source: &AuditSource, ccim: Option<&CcimModel>) -> Vec<Signal> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("external report {} unreadable: {e}", path.display());
            return Vec::new();
        }
    };
    parse_external(&text, tool, source, ccim)
}

pub fn parse_external(text: &str, tool: ExternalTool, source: &AuditSource, ccim: Option<&CcimModel>) -> Vec<Signal> {
    let entries = match serde_json::from_str::<Report>(text) {
        Ok(Report::List(v)) | Ok(Report::Wrapped { findings: v }) => v,
        Err(e) => {
            log::warn!("external report malformed: {e}");
            return Vec::new();
        }
    };
    let tag = tool.tag();
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let severity = Severity::parse_loose(&e.severity).unwrap_or(Severity::Info);
            let line = match (&e.file, e.line) {
                (Some(f), Some(l)) => source.offsets.to_concat(f, l),
                (None, Some(l)) => (l >= 1 && l <= source.line_count()).then_some(l),
                _ => None,
            };
            if e.line.is_some() && line.is_none() {
                log::warn!("external finding {} has an untranslatable line; dropping the hint", e.detector);
            }
            let function = e
                .function
                .as_deref()
                .and_then(|f| f.parse::<FnRef>().ok())
                .filter(|f| !f.owner.is_empty())
                .or_else(|| {
                    let m = ccim?;
                    m.record_at_line(line?).map(|r| r.fn_ref())
                });
            let desc = if e.description.is_empty() { e.detector.clone() } else { e.description.clone() };
            let mut s = Signal::new(
                tag,
                &format!("{}-{}", tag.as_str(), e.detector),
                i,
                severity,
                e.confidence.unwrap_or(0.5),
                crate::types::normalize_ws(&desc),
            );
            s.function = function;
            s.line_hint = line;
            s
        })
        .collect()
}

impl serde::Serialize for ExternalTool {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag().as_str())
    }
}

impl<'de> serde::Deserialize<'de> for ExternalTool {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "SLI" => Ok(ExternalTool::Slither),
            "MYT" => Ok(ExternalTool::Mythril),
            other => Err(serde::de::Error::custom(format!("unknown external tool {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_entries_with_mapping() {
        let src = AuditSource::single("src/A.sol", "contract A {\n    function f() external {}\n}\n");
        let json = r#"{"findings": [
            {"detector": "reentrancy-eth", "description": "d1", "severity": "High", "file": "src/A.sol", "line": 2},
            {"detector": "x", "description": "d2", "severity": "weird", "line": 1},
            {"detector": "y", "description": "d3", "severity": "low"}
        ]}"#;
        let got = parse_external(json, ExternalTool::Slither, &src, None);
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|s| s.source_tag == Engine::Sli));
        assert_eq!(got[0].severity, Severity::High);
        assert_eq!(got[0].line_hint, Some(2));
        assert_eq!(got[1].severity, Severity::Info);
        assert_eq!(got[2].severity, Severity::Low);
    }

    #[test]
    fn missing_or_malformed() {
        let src = AuditSource::single("A.sol", "contract A {}\n");
        assert!(ingest_external(Path::new("/nonexistent/report.json"), ExternalTool::Mythril, &src, None).is_empty());
        assert!(parse_external("{not json", ExternalTool::Mythril, &src, None).is_empty());
    }
}
