//! The audit report, its citations and its Markdown and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ccim::CcimModel;
use crate::coverage::{AttentionStatus, CoverageReport, ResidualClassification};
use crate::finding::Finding;
use crate::funnel::FunnelStats;
use crate::ingest::AuditSource;
use crate::signals::merge::{EngineFailure, EngineStats};
use crate::signals::{Engine, MergedSignals};
use crate::triage::{MergedFindingSet, Tagging};
use crate::types::{FnRef, Severity};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Json,
}

impl Format {
    pub fn file_name(self) -> &'static str {
        match self {
            Format::Md => "report.md",
            Format::Json => "report.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub function: FnRef,
    pub file: String,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCitation {
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedFinding {
    #[serde(flatten)]
    pub finding: Finding,
    pub citations: Vec<Citation>,
    pub evidence: Vec<LineCitation>,
}

/// `src(f)` of every resolvable affected function as original-file ranges.
pub fn cite(f: &Finding, ccim: &CcimModel, source: &AuditSource) -> ReportedFinding {
    let citations = f
        .affected_functions
        .iter()
        .filter_map(|g| {
            let r = ccim.record(g)?;
            let (file, start) = source.offsets.map_line(r.src.0).ok()?;
            let (_, end) = source.offsets.map_line(r.src.1).ok()?;
            Some(Citation {
                function: g.clone(),
                file: file.to_string(),
                start_line: start,
                end_line: end,
            })
        })
        .collect();
    let evidence = f
        .evidence_lines
        .iter()
        .filter_map(|&l| {
            let (file, line) = source.offsets.map_line(l).ok()?;
            Some(LineCitation { file: file.to_string(), line })
        })
        .collect();
    ReportedFinding {
        finding: f.clone(),
        citations,
        evidence,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcimSummary {
    pub contracts: usize,
    pub in_scope_contracts: Vec<String>,
    pub functions: usize,
    pub cross_contract_edges: usize,
    pub admin_functions: usize,
    pub fund_moving_functions: usize,
    pub rotation_risks: Vec<String>,
    pub trust_gaps: Vec<String>,
    pub callbacks: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl CcimSummary {
    pub fn of(ccim: &CcimModel) -> Self {
        CcimSummary {
            contracts: ccim.contracts.len(),
            in_scope_contracts: ccim.in_scope_contracts().map(|c| c.name.clone()).collect(),
            functions: ccim.records.len(),
            cross_contract_edges: ccim.graph.edges.len(),
            admin_functions: ccim.admin_set.len(),
            fund_moving_functions: ccim.footprints.per_function.values().filter(|p| p.fund).count(),
            rotation_risks: ccim.deps.rot.iter().map(ToString::to_string).collect(),
            trust_gaps: ccim.trust.gaps().map(|p| format!("{} -> {}", p.caller, p.callee)).collect(),
            callbacks: ccim.trust.callbacks.iter().map(|(a, b)| format!("{a} <-> {b}")).collect(),
            diagnostics: ccim.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalSummary {
    pub retained: usize,
    pub cap: usize,
    pub cap_applied: bool,
    pub per_engine: BTreeMap<Engine, EngineStats>,
    pub failures: Vec<EngineFailure>,
}

impl SignalSummary {
    pub fn of(m: &MergedSignals) -> Self {
        SignalSummary {
            retained: m.len(),
            cap: m.cap,
            cap_applied: m.cap_applied,
            per_engine: m.stats.clone(),
            failures: m.failures.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub dd_dossiers: usize,
    pub dd_flagged: usize,
    pub dd_generated: BTreeMap<String, usize>,
    pub dd_findings: usize,
    pub id_pairs: Vec<String>,
    pub id_specs_inferred: usize,
    pub id_standalone_slots: usize,
    pub id_rejected: usize,
    pub id_findings: usize,
    pub reaudit_findings: usize,
}

/// The merged-set fields `⟨F, π, D, conf'⟩` by finding id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergedSummary {
    pub findings: Vec<String>,
    pub pi: Tagging,
    pub clusters: Vec<Vec<String>>,
    pub conf_post: BTreeMap<String, f64>,
}

impl MergedSummary {
    pub fn of(m: &MergedFindingSet) -> Self {
        MergedSummary {
            findings: m.findings.iter().map(|f| f.id.clone()).collect(),
            pi: m.pi.clone(),
            clusters: m.partition.clusters.iter().map(|c| c.iter().cloned().collect()).collect(),
            conf_post: m.conf_post.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSection {
    pub report: CoverageReport,
    pub gap_prompts: usize,
    pub residual: ResidualClassification,
    pub blind_spot_functions: Vec<FnRef>,
}

/// Wall-clock durations; not serialized so reports stay byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timings {
    pub substrate: Duration,
    pub pipelines: Duration,
    pub dd: Duration,
    pub id: Duration,
    pub merge_and_funnel: Duration,
    pub coverage: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub target: String,
    pub scope: Vec<String>,
    pub ccim: CcimSummary,
    pub signals: SignalSummary,
    pub pipelines: PipelineSummary,
    pub merged: MergedSummary,
    pub findings: Vec<ReportedFinding>,
    pub funnel: FunnelStats,
    pub coverage: CoverageSection,
    #[serde(skip)]
    pub timings: Timings,
}

impl AuditReport {
    pub fn count_at_least(&self, gate: Severity) -> usize {
        self.findings.iter().filter(|f| f.finding.severity >= gate).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_markdown(&self) -> String {
        render_markdown(self)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Md => self.to_markdown(),
            Format::Json => self.to_json(),
        }
    }
}

/// Write one file per format into `dir`, creating it when needed.
pub fn emit(report: &AuditReport, formats: &[Format], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(f.file_name());
        std::fs::write(&path, report.render(f))?;
        written.push(path);
    }
    Ok(written)
}

fn esc(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn render_markdown(r: &AuditReport) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "# Audit report: {}\n", r.target);
    let _ = writeln!(o, "Scope: {}\n", if r.scope.is_empty() { "(empty)".to_string() } else { r.scope.join(", ") });
    let mut by_sev: BTreeMap<std::cmp::Reverse<Severity>, usize> = BTreeMap::new();
    for f in &r.findings {
        *by_sev.entry(std::cmp::Reverse(f.finding.severity)).or_default() += 1;
    }
    let tally: Vec<String> = by_sev.iter().map(|(s, n)| format!("{} {n}", s.0)).collect();
    let _ = writeln!(o, "{} findings{}\n", r.findings.len(), if tally.is_empty() { String::new() } else { format!(" ({})", tally.join(", ")) });

    let _ = writeln!(o, "## Findings\n");
    if r.findings.is_empty() {
        let _ = writeln!(o, "No findings survived verification.\n");
    } else {
        let _ = writeln!(o, "| ID | Severity | Confidence | Title | Location |\n|---|---|---|---|---|");
        for f in &r.findings {
            let loc = f.citations.first().map_or(String::new(), |c| format!("{}:{}-{}", c.file, c.start_line, c.end_line));
            let _ = writeln!(o, "| {} | {} | {:.2} | {} | {} |", f.finding.id, f.finding.severity, f.finding.confidence, esc(&f.finding.title), loc);
        }
        o.push('\n');
        for f in &r.findings {
            let x = &f.finding;
            let _ = writeln!(o, "### {}: {}\n", x.id, x.title);
            let affected: Vec<String> = x.affected_functions.iter().map(ToString::to_string).collect();
            let _ = writeln!(o, "- Severity: {}\n- Confidence: {:.2}\n- Functions: {}", x.severity, x.confidence, affected.join(", "));
            if let Some(c) = &x.card {
                let var = c.abused_state_variable.as_deref().unwrap_or("none");
                let _ = writeln!(o, "- Root cause: {} / {} / {} (attacker: {})", c.vulnerable_function, var, c.impact_class, c.attacker_role);
            }
            if !x.flags.is_empty() {
                let flags: Vec<String> = x.flags.iter().map(|fl| serde_json::to_value(fl).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()).collect();
                let _ = writeln!(o, "- Flags: {}", flags.join(", "));
            }
            if !x.related.is_empty() {
                let _ = writeln!(o, "- Related: {}", x.related.join(", "));
            }
            for c in &f.citations {
                let _ = writeln!(o, "- Source: `{}` {}:{}-{}", c.function, c.file, c.start_line, c.end_line);
            }
            if !f.evidence.is_empty() {
                let ev: Vec<String> = f.evidence.iter().map(|e| format!("{}:{}", e.file, e.line)).collect();
                let _ = writeln!(o, "- Evidence: {}", ev.join(", "));
            }
            o.push('\n');
            if !x.description.is_empty() {
                let _ = writeln!(o, "{}\n", x.description);
            }
            if !x.attack_scenario.is_empty() {
                let _ = writeln!(o, "**Scenario.** {}\n", x.attack_scenario);
            }
        }
    }

    let _ = writeln!(o, "## Reduction funnel\n");
    let _ = writeln!(o, "| Stage | In | Out | Verdicts |\n|---|---|---|---|");
    for s in &r.funnel.stages {
        let v: Vec<String> = s.tallies.iter().map(|(k, n)| format!("{k} {n}")).collect();
        let _ = writeln!(o, "| {} | {} | {} | {} |", s.stage, s.input, s.output, v.join(", "));
    }
    o.push('\n');

    let _ = writeln!(o, "## Coverage\n");
    let c = &r.coverage;
    let feats: Vec<&str> = c.report.detected_features.iter().map(|d| d.name.as_str()).collect();
    let _ = writeln!(o, "Detected features: {}\n", if feats.is_empty() { "none".to_string() } else { feats.join(", ") });
    if !c.report.gap_set.is_empty() {
        let gaps: Vec<&str> = c.report.gap_set.iter().map(String::as_str).collect();
        let _ = writeln!(o, "Gap classes: {}\n", gaps.join(", "));
    }
    let _ = writeln!(o, "| Class | Hit | Findings |\n|---|---|---|");
    for (id, h) in &c.report.keyword_map {
        let _ = writeln!(o, "| {id} | {} | {} |", if h.hit { "yes" } else { "no" }, h.findings.join(", "));
    }
    o.push('\n');
    let _ = writeln!(
        o,
        "Attention: {} discussed, {} partial, {} unattended.\n",
        c.residual.count(AttentionStatus::Discussed),
        c.residual.count(AttentionStatus::PartialAttention),
        c.residual.count(AttentionStatus::Unattended)
    );
    let residuals: Vec<_> = c.residual.residuals().collect();
    if !residuals.is_empty() {
        let _ = writeln!(o, "| Function | Status | Risk |\n|---|---|---|");
        for e in residuals {
            let status = serde_json::to_value(e.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(o, "| {} | {status} | {:.1} |", e.function, e.risk_score);
        }
        o.push('\n');
    }

    let _ = writeln!(o, "## Interaction model\n");
    let m = &r.ccim;
    let _ = writeln!(
        o,
        "{} contracts, {} functions, {} cross-contract edges, {} admin functions, {} fund-moving functions.\n",
        m.contracts, m.functions, m.cross_contract_edges, m.admin_functions, m.fund_moving_functions
    );
    for (label, items) in [("Rotation risks", &m.rotation_risks), ("Trust gaps", &m.trust_gaps), ("Callbacks", &m.callbacks)] {
        if !items.is_empty() {
            let _ = writeln!(o, "{label}: {}\n", items.join(", "));
        }
    }
    let _ = writeln!(o, "Signals retained: {} (cap {}{}).", r.signals.retained, r.signals.cap, if r.signals.cap_applied { ", applied" } else { "" });
    o
}
