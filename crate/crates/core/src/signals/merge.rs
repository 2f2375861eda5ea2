//! Pools engine outputs, ranks them and applies the global cap.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Engine, EngineOutput, Signal};
use crate::types::FnRef;

pub const DEFAULT_SIGNAL_CAP: usize = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineFailure {
    pub engine: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergedSignals {
    pub per_engine: BTreeMap<Engine, Vec<Signal>>,
    pub stats: BTreeMap<Engine, EngineStats>,
    pub cap: usize,
    pub cap_applied: bool,
    pub failures: Vec<EngineFailure>,
}

/// Ranking: severity desc, confidence desc, engine tag, id.
pub fn rank(a: &Signal, b: &Signal) -> Ordering {
    b.severity
        .cmp(&a.severity)
        .then_with(|| b.confidence.total_cmp(&a.confidence))
        .then_with(|| a.source_tag.as_str().cmp(b.source_tag.as_str()))
        .then_with(|| a.id.cmp(&b.id))
}

pub fn merge_signals(outputs: Vec<EngineOutput>, cap: usize) -> MergedSignals {
    let mut failures = Vec::new();
    let mut pool = Vec::new();
    for o in outputs {
        if let Some(e) = o.error {
            failures.push(EngineFailure { engine: o.engine, error: e });
        }
        pool.extend(o.signals);
    }
    let mut stats: BTreeMap<Engine, EngineStats> = BTreeMap::new();
    for s in &pool {
        stats.entry(s.source_tag).or_default().before += 1;
    }
    pool.sort_by(rank);
    let cap_applied = pool.len() > cap;
    pool.truncate(cap);
    let mut per_engine: BTreeMap<Engine, Vec<Signal>> = BTreeMap::new();
    for s in pool {
        stats.entry(s.source_tag).or_default().after += 1;
        per_engine.entry(s.source_tag).or_default().push(s);
    }
    MergedSignals {
        per_engine,
        stats,
        cap,
        cap_applied,
        failures,
    }
}

impl MergedSignals {
    /// Retained signals in rank order.
    pub fn all(&self) -> Vec<&Signal> {
        let mut v: Vec<&Signal> = self.per_engine.values().flatten().collect();
        v.sort_by(|a, b| rank(a, b));
        v
    }

    pub fn len(&self) -> usize {
        self.per_engine.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_function(&self, f: &FnRef) -> Vec<&Signal> {
        self.all().into_iter().filter(|s| s.function.as_ref() == Some(f)).collect()
    }

    pub fn find(&self, id: &str) -> Option<&Signal> {
        self.per_engine.values().flatten().find(|s| s.id == id)
    }

    /// One section per signal source.
    pub fn to_markdown(&self) -> String {
        render_sections(self.per_engine.iter().map(|(e, v)| (*e, v.iter().collect())))
    }

    /// The same rendering restricted to `f`.
    pub fn markdown_for(&self, f: &FnRef) -> String {
        render_sections(self.per_engine.iter().map(|(e, v)| {
            (*e, v.iter().filter(|s| s.function.as_ref() == Some(f)).collect())
        }))
    }
}

fn render_sections<'a>(sections: impl Iterator<Item = (Engine, Vec<&'a Signal>)>) -> String {
    let mut out = String::new();
    for (engine, sigs) in sections {
        if sigs.is_empty() {
            continue;
        }
        let _ = writeln!(out, "### {engine} ({} signals)", sigs.len());
        for s in sigs {
            let loc = match (&s.function, s.line_hint) {
                (Some(f), Some(l)) => format!(" [{f}, line {l}]"),
                (Some(f), None) => format!(" [{f}]"),
                (None, Some(l)) => format!(" [line {l}]"),
                (None, None) => String::new(),
            };
            let _ = writeln!(
                out,
                "- **{}** `{}` ({:.2}): {}{loc}",
                s.severity, s.id, s.confidence, s.description
            );
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Severity;

    fn s(tag: Engine, id: &str, sev: Severity, conf: f64) -> Signal {
        Signal::new(tag, id, "x", sev, conf, "d")
    }

    fn out(signals: Vec<Signal>) -> EngineOutput {
        EngineOutput {
            engine: "T".into(),
            signals,
            error: None,
        }
    }

    #[test]
    fn tie_broken_by_engine_tag() {
        let m = merge_signals(
            vec![out(vec![s(Engine::Sig, "R", Severity::High, 0.5), s(Engine::Bva, "R", Severity::High, 0.5)])],
            50,
        );
        let all = m.all();
        assert_eq!(all[0].source_tag, Engine::Bva);
        assert!(!m.cap_applied);
    }

    #[test]
    fn failures_are_recorded() {
        let m = merge_signals(
            vec![EngineOutput {
                engine: "X".into(),
                signals: vec![],
                error: Some("boom".into()),
            }],
            50,
        );
        assert_eq!(m.failures.len(), 1);
        assert!(m.is_empty());
    }
}
