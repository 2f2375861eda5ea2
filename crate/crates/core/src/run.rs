//! The orchestrator: substrate, concurrent pipelines, merge, funnel,
//! coverage and report.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{COVERAGE_CLASSES, FEATURES};
use crate::ccim::{self, CcimModel};
use crate::config::PipelineConfig;
use crate::coverage::{self, ResidualClassification};
use crate::dd::{self, ask_findings, PipelineContext};
use crate::finding::Finding;
use crate::funnel::{self, FunnelConfig};
use crate::ingest::{self, AuditSource, IngestError};
use crate::interaction;
use crate::reasoner::{stage, MockReasoner, MockScript, OfflineReasoner, Reasoner, ScriptError};
use crate::report::{self, AuditReport, CcimSummary, CoverageSection, Format, MergedSummary, PipelineSummary, SignalSummary, Timings};
use crate::signals::external::{ingest_external, ExternalTool};
use crate::signals::{self, EngineOutput, MergedSignals, DEFAULT_SIGNAL_CAP};
use crate::triage::{self, MergeError};
use crate::types::{Pipeline, Severity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub path: PathBuf,
    pub scope: Option<Vec<String>>,
    pub signal_cap: usize,
    pub char_budget: usize,
    /// Without a script every reasoner call fails and LLM stages degrade.
    pub mock_script: Option<PathBuf>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub severity_gate: Severity,
    pub external_signals: Vec<(ExternalTool, PathBuf)>,
    /// Closed-loop re-audit rounds after coverage.
    pub reaudit_rounds: usize,
    /// Residuals packaged for the blind-spot review.
    pub blind_spot_top: usize,
    pub funnel: FunnelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            path: PathBuf::from("."),
            scope: None,
            signal_cap: DEFAULT_SIGNAL_CAP,
            char_budget: 24_000,
            mock_script: None,
            out: PathBuf::from("solaudit-out"),
            formats: vec![Format::Md, Format::Json],
            severity_gate: Severity::High,
            external_signals: Vec::new(),
            reaudit_rounds: 1,
            blind_spot_top: 5,
            funnel: FunnelConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("no report format selected")]
    NoFormat,
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
}

/// Ingest, load the reasoner and run.
pub fn run(config: &RunConfig) -> Result<AuditReport, RunError> {
    if config.formats.is_empty() {
        return Err(RunError::NoFormat);
    }
    let (source, _) = ingest::ingest(&config.path, config.scope.as_deref())?;
    let reasoner: Box<dyn Reasoner> = match &config.mock_script {
        Some(p) => Box::new(MockReasoner::new(MockScript::load(p)?)),
        None => Box::new(OfflineReasoner::default()),
    };
    audit(&source, reasoner.as_ref(), config)
}

/// Worker count of the run pool. The two pipelines must overlap even on a
/// single core, so there are always at least four.
pub fn pool_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).max(4)
}

pub fn audit(source: &AuditSource, reasoner: &dyn Reasoner, config: &RunConfig) -> Result<AuditReport, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_threads())
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| audit_in_pool(source, reasoner, config))
}

fn external_outputs(config: &RunConfig, source: &AuditSource, ccim: &CcimModel) -> Vec<EngineOutput> {
    config
        .external_signals
        .iter()
        .map(|(tool, path)| EngineOutput {
            engine: tool.tag().as_str().to_string(),
            signals: ingest_external(path, *tool, source, Some(ccim)),
            error: None,
        })
        .collect()
}

/// One closed-loop round: gap prompts and the blind-spot review. New
/// findings continue the dossier-side numbering.
fn reaudit_round(
    ctx: &PipelineContext,
    gap_prompts: &[coverage::GapPrompt],
    blind_spot: Option<String>,
    next_id: usize,
) -> Vec<Finding> {
    let mut found = Vec::new();
    for g in gap_prompts {
        found.extend(ask_findings(ctx, stage::GAP_REAUDIT, g.prompt.clone(), Pipeline::D, &[]));
    }
    if let Some(p) = blind_spot {
        found.extend(ask_findings(ctx, stage::BLIND_SPOT, p, Pipeline::D, &[]));
    }
    crate::finding::canonical_order(&mut found);
    for (i, f) in found.iter_mut().enumerate() {
        f.id = format!("{}-{:03}", Pipeline::D.id_prefix(), next_id + i);
    }
    found
}

fn audit_in_pool(source: &AuditSource, reasoner: &dyn Reasoner, config: &RunConfig) -> Result<AuditReport, RunError> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let model = ccim::build(source);
    let merged_signals = signals::collect_signals(&model, source, external_outputs(config, source, &model), config.signal_cap);
    timings.substrate = t.elapsed();

    let cfg = PipelineConfig {
        char_budget: config.char_budget,
        ..PipelineConfig::default()
    };
    let dd_signals: MergedSignals = merged_signals.clone();
    let id_signals: MergedSignals = merged_signals.clone();
    let dd_ctx = PipelineContext { ccim: &model, source, signals: &dd_signals, reasoner, cfg: &cfg };
    let id_ctx = PipelineContext { ccim: &model, source, signals: &id_signals, reasoner, cfg: &cfg };

    let t = Instant::now();
    let ((dd_report, dd_time), (id_report, id_time)) = rayon::join(
        || {
            let t = Instant::now();
            (dd::run_dd(&dd_ctx), t.elapsed())
        },
        || {
            let t = Instant::now();
            (interaction::run_id(&id_ctx), t.elapsed())
        },
    );
    timings.pipelines = t.elapsed();
    timings.dd = dd_time;
    timings.id = id_time;

    let ctx = PipelineContext { ccim: &model, source, signals: &merged_signals, reasoner, cfg: &cfg };
    let t = Instant::now();
    let mut fd = dd_report.findings.clone();
    let fi = id_report.findings.clone();
    let mut merged = triage::merge(fd.clone(), fi.clone(), &model)?;
    let (mut finals, mut stats) = funnel::run_funnel(&merged, &ctx, &config.funnel);
    timings.merge_and_funnel = t.elapsed();

    let t = Instant::now();
    let detected = coverage::detect_features(&model, &FEATURES);
    let mut generated: Vec<Finding> = fd.iter().chain(fi.iter()).cloned().collect();
    let mut cov = coverage::compute_gap_set(&finals, &detected, &FEATURES, &COVERAGE_CLASSES);
    let mut residual = coverage::attention_residual(&model, &coverage::documents_from_findings(&generated));
    let mut reaudit_count = 0;
    for _ in 0..config.reaudit_rounds {
        let gaps = coverage::gap_reaudit_prompts(&cov, &model, &FEATURES, &COVERAGE_CLASSES);
        let blind = coverage::blind_spot_prompt(&model, &residual, config.blind_spot_top);
        if gaps.is_empty() && blind.is_none() {
            break;
        }
        let round = reaudit_round(&ctx, &gaps, blind, fd.len() + 1);
        if round.is_empty() {
            break;
        }
        reaudit_count += round.len();
        generated.extend(round.iter().cloned());
        fd.extend(round);
        merged = triage::merge(fd.clone(), fi.clone(), &model)?;
        (finals, stats) = funnel::run_funnel(&merged, &ctx, &config.funnel);
        cov = coverage::compute_gap_set(&finals, &detected, &FEATURES, &COVERAGE_CLASSES);
        residual = coverage::attention_residual(&model, &coverage::documents_from_findings(&generated));
    }
    let gap_prompts = coverage::gap_reaudit_prompts(&cov, &model, &FEATURES, &COVERAGE_CLASSES).len();
    timings.coverage = t.elapsed();

    finals.sort_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then_with(|| b.confidence.total_cmp(&a.confidence))
            .then_with(|| a.id.cmp(&b.id))
    });
    let findings = finals.iter().map(|f| report::cite(f, &model, source)).collect();
    Ok(AuditReport {
        schema_version: report::SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        target: config.path.display().to_string(),
        scope: source.scope.clone(),
        ccim: CcimSummary::of(&model),
        signals: SignalSummary::of(&merged_signals),
        pipelines: PipelineSummary {
            dd_dossiers: dd_report.dossiers,
            dd_flagged: dd_report.flagged,
            dd_generated: dd_report.generated.clone(),
            dd_findings: dd_report.findings.len(),
            id_pairs: id_report.pairs.iter().map(ToString::to_string).collect(),
            id_specs_inferred: id_report.specs_inferred,
            id_standalone_slots: id_report.standalone_slots,
            id_rejected: id_report.rejected.len(),
            id_findings: id_report.findings.len(),
            reaudit_findings: reaudit_count,
        },
        merged: MergedSummary::of(&merged),
        findings,
        funnel: stats,
        coverage: CoverageSection {
            blind_spot_functions: blind_spot_functions(&residual, config.blind_spot_top),
            report: cov,
            gap_prompts,
            residual,
        },
        timings,
    })
}

fn blind_spot_functions(r: &ResidualClassification, top: usize) -> Vec<crate::types::FnRef> {
    r.residuals().take(top).map(|e| e.function.clone()).collect()
}
