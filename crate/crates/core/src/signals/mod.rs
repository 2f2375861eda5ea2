//! Deterministic signal engines and the capped signal merger.
//!
//! Every engine is a pure function over the immutable model and the audit
//! source. Engines run in isolation: a panicking engine leaves an empty
//! slot and a recorded failure, never a missing merged record.

pub mod bpm;
pub mod bva;
pub mod cir;
pub mod code;
pub mod external;
pub mod ira;
pub mod itpc;
pub mod merge;
pub mod patterns;

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccim::CcimModel;
use crate::ingest::AuditSource;
use crate::types::{FnRef, Severity};

pub use external::{ingest_external, ExternalTool};
pub use merge::{merge_signals, EngineStats, MergedSignals, DEFAULT_SIGNAL_CAP};

/// Source tag of a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Engine {
    Asm,
    Bpm,
    Bva,
    Ccim,
    Ccpti,
    Cir,
    Custom,
    Ira,
    Itpc,
    Math,
    Myt,
    Sig,
    Sli,
}

impl Engine {
    pub const ALL: [Engine; 13] = [
        Engine::Asm,
        Engine::Bpm,
        Engine::Bva,
        Engine::Ccim,
        Engine::Ccpti,
        Engine::Cir,
        Engine::Custom,
        Engine::Ira,
        Engine::Itpc,
        Engine::Math,
        Engine::Myt,
        Engine::Sig,
        Engine::Sli,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Asm => "ASM",
            Engine::Bpm => "BPM",
            Engine::Bva => "BVA",
            Engine::Ccim => "CCIM",
            Engine::Ccpti => "CCPTI",
            Engine::Cir => "CIR",
            Engine::Custom => "CUSTOM",
            Engine::Ira => "IRA",
            Engine::Itpc => "ITPC",
            Engine::Math => "MATH",
            Engine::Myt => "MYT",
            Engine::Sig => "SIG",
            Engine::Sli => "SLI",
        }
    }

    pub fn parse(s: &str) -> Option<Engine> {
        Engine::ALL.into_iter().find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub source_tag: Engine,
    /// `RULE@subject`, stable across runs.
    pub id: String,
    pub description: String,
    pub severity: Severity,
    pub confidence: f64,
    pub function: Option<FnRef>,
    pub line_hint: Option<usize>,
    /// Storage variable or contract the signal is about, when not a function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl Signal {
    pub fn new(
        tag: Engine,
        rule: &str,
        subject: impl fmt::Display,
        severity: Severity,
        confidence: f64,
        description: impl Into<String>,
    ) -> Self {
        Signal {
            source_tag: tag,
            id: format!("{rule}@{subject}"),
            description: description.into(),
            severity,
            confidence: confidence.clamp(0.0, 1.0),
            function: None,
            line_hint: None,
            subject: None,
        }
    }

    pub fn on(mut self, f: FnRef) -> Self {
        self.function = Some(f);
        self
    }

    pub fn at(mut self, line: usize) -> Self {
        self.line_hint = Some(line);
        self
    }

    pub fn about(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    /// Rule name: the id up to `@`.
    pub fn rule(&self) -> &str {
        self.id.split('@').next().unwrap_or(&self.id)
    }
}

/// Result of one engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineOutput {
    pub engine: String,
    pub signals: Vec<Signal>,
    pub error: Option<String>,
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "engine panicked".to_string())
}

/// Run `f`, converting a panic into an empty output with an error.
pub fn run_isolated<F>(engine: &str, f: F) -> EngineOutput
where
    F: FnOnce() -> Vec<Signal>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(signals) => EngineOutput {
            engine: engine.to_string(),
            signals,
            error: None,
        },
        Err(e) => {
            let msg = panic_message(e.as_ref());
            log::warn!("engine {engine} failed: {msg}");
            EngineOutput {
                engine: engine.to_string(),
                signals: Vec::new(),
                error: Some(msg),
            }
        }
    }
}

/// Sub-analyzer isolation: a panic yields an empty list and a warning.
pub(crate) fn guarded<F>(what: &str, f: F) -> Vec<Signal>
where
    F: FnOnce() -> Vec<Signal>,
{
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        log::warn!("{what} failed: {}", panic_message(e.as_ref()));
        Vec::new()
    })
}

pub type EngineFn = fn(&CcimModel, &AuditSource) -> Vec<Signal>;

/// The built-in engines in fixed order.
pub fn builtin_engines() -> Vec<(&'static str, EngineFn)> {
    vec![
        ("BVA", bva::run_bva as EngineFn),
        ("BPM", |m, _| bpm::run_bpm(m)),
        ("CIR", |m, _| cir::run_cir(m)),
        ("IRA", |m, _| ira::run_ira(m)),
        ("PATTERNS", patterns::run_pattern_detectors),
        ("ITPC", |m, _| itpc::run_itpc_lite(m)),
        ("CCIM", |m, _| ccim_signals(m)),
    ]
}

/// Run engines concurrently; output order follows `engines`.
pub fn run_engines(engines: &[(&str, EngineFn)], ccim: &CcimModel, source: &AuditSource) -> Vec<EngineOutput> {
    engines
        .par_iter()
        .map(|(name, f)| run_isolated(name, || f(ccim, source)))
        .collect()
}

/// Rotation-risk and trust-gap findings of the model as signals.
pub fn ccim_signals(ccim: &CcimModel) -> Vec<Signal> {
    let mut out = Vec::new();
    for v in &ccim.deps.rot {
        let writers: Vec<String> = ccim
            .deps
            .writers_of(v)
            .filter(|f| ccim.is_admin(f))
            .map(|f| f.to_string())
            .collect();
        let line = ccim
            .contract(&v.contract)
            .and_then(|c| c.state_var(&v.name))
            .map(|sv| sv.line);
        let mut s = Signal::new(
            Engine::Ccim,
            "CCIM-ROTATION",
            v,
            Severity::Medium,
            0.5,
            format!(
                "privileged rotation of `{v}` by {} while it is used as a call target or approval",
                writers.join(", ")
            ),
        )
        .about(v.to_string());
        if let Some(w) = ccim.deps.writers_of(v).find(|f| ccim.is_admin(f)) {
            s = s.on(w.clone());
        }
        if let Some(l) = line {
            s = s.at(l);
        }
        out.push(s);
    }
    for p in ccim.trust.gaps() {
        let missing: Vec<&String> = p.assumes.difference(&p.enforces).collect();
        let desc = format!(
            "{} relies on {} post-conditions not enforced by the caller: {}",
            p.callee,
            p.caller,
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ")
        );
        let mut s = Signal::new(
            Engine::Ccim,
            "CCIM-TRUSTGAP",
            format!("{}->{}", p.caller, p.callee),
            Severity::Low,
            0.4,
            desc,
        )
        .about(p.callee.clone());
        let edge = ccim
            .graph
            .edges
            .iter()
            .find(|(a, b)| a.owner == p.caller && b.owner == p.callee);
        if let Some((caller, _)) = edge {
            s = s.on(caller.clone());
            if let Some(r) = ccim.record(caller) {
                s = s.at(r.src.0);
            }
        }
        out.push(s);
    }
    out
}

/// Run every built-in engine and merge with the given cap.
pub fn collect_signals(
    ccim: &CcimModel,
    source: &AuditSource,
    external: Vec<EngineOutput>,
    cap: usize,
) -> MergedSignals {
    let mut outputs = run_engines(&builtin_engines(), ccim, source);
    outputs.extend(external);
    merge_signals(outputs, cap)
}
