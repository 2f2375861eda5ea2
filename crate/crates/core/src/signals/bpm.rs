//! Behavioral pattern mining: writers of a variable that deviate from the
//! majority in guards, co-modified variables or emitted events.

use std::collections::{BTreeMap, BTreeSet};

use super::{Engine, Signal};
use crate::ccim::{CcimModel, FunctionKind, FunctionRecord};
use crate::types::{FnRef, Severity, VarId};

/// Minimum number of writers for a majority pattern.
pub const MIN_SUPPORT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Feature {
    Guard(String),
    CoWrite(VarId),
    Emits(String),
}

impl Feature {
    fn rule(&self) -> &'static str {
        match self {
            Feature::Guard(_) => "BPM-GUARD",
            Feature::CoWrite(_) => "BPM-COMODIFY",
            Feature::Emits(_) => "BPM-ACTION-REACTION",
        }
    }

    fn label(&self) -> String {
        match self {
            Feature::Guard(g) => g.clone(),
            Feature::CoWrite(v) => v.to_string(),
            Feature::Emits(e) => e.clone(),
        }
    }
}

fn features(ccim: &CcimModel, r: &FunctionRecord, v: &VarId) -> BTreeSet<Feature> {
    let mut out = BTreeSet::new();
    for m in &r.modifiers {
        out.insert(Feature::Guard(m.name.clone()));
    }
    for g in &r.guards {
        out.insert(Feature::Guard(g.expr.clone()));
    }
    if let Some(fp) = ccim.footprints.get(&r.fn_ref()) {
        for w in fp.writes.iter().filter(|w| *w != v) {
            out.insert(Feature::CoWrite(w.clone()));
        }
    }
    for p in &r.posts {
        if let Some(rest) = p.strip_prefix("emit ") {
            let name = rest.split('(').next().unwrap_or(rest).trim();
            out.insert(Feature::Emits(name.to_string()));
        }
    }
    out
}

pub fn run_bpm(ccim: &CcimModel) -> Vec<Signal> {
    let mut out: BTreeMap<String, Signal> = BTreeMap::new();
    for (v, writers) in &ccim.deps.writers {
        let recs: Vec<&FunctionRecord> = writers
            .iter()
            .filter_map(|f| ccim.record(f))
            .filter(|r| r.vis.is_entry() && r.kind != FunctionKind::Constructor)
            .collect();
        let n = recs.len();
        if n < MIN_SUPPORT {
            continue;
        }
        let feats: Vec<(FnRef, BTreeSet<Feature>)> =
            recs.iter().map(|r| (r.fn_ref(), features(ccim, r, v))).collect();
        let mut counts: BTreeMap<&Feature, usize> = BTreeMap::new();
        for (_, fs) in &feats {
            for f in fs {
                *counts.entry(f).or_default() += 1;
            }
        }
        for (feat, k) in counts {
            if 2 * k <= n || k == n {
                continue;
            }
            for (f, fs) in &feats {
                if fs.contains(feat) {
                    continue;
                }
                let rule = feat.rule();
                let label = feat.label();
                let desc = match feat {
                    Feature::Guard(_) => format!("{f} writes `{v}` without `{label}`, present on {k} of {n} writers"),
                    Feature::CoWrite(_) => format!("{f} writes `{v}` but not `{label}`, which {k} of {n} writers also update"),
                    Feature::Emits(_) => format!("{f} writes `{v}` without emitting `{label}`, as {k} of {n} writers do"),
                };
                let sev = match feat {
                    Feature::Guard(_) | Feature::CoWrite(_) => Severity::Medium,
                    Feature::Emits(_) => Severity::Low,
                };
                let line = ccim.record(f).map(|r| r.src.0);
                let mut s = Signal::new(Engine::Bpm, rule, format!("{f}:{}:{label}", v.name), sev, 0.5, desc)
                    .on(f.clone())
                    .about(v.to_string());
                if let Some(l) = line {
                    s = s.at(l);
                }
                out.entry(s.id.clone()).or_insert(s);
            }
        }
    }
    out.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccim;
    use crate::ingest::AuditSource;

    fn run(src: &str) -> Vec<Signal> {
        run_bpm(&ccim::build(&AuditSource::single("T.sol", src)))
    }

    #[test]
    fn outlier_without_majority_guard() {
        let src = "contract P {\n    mapping(address => uint) balances;\n    modifier nonReentrant() { _; }\n    function a(uint x) external nonReentrant { balances[msg.sender] += x; }\n    function b(uint x) external nonReentrant { balances[msg.sender] -= x; }\n    function c(uint x) external nonReentrant { balances[msg.sender] = x; }\n    function d(uint x) external { balances[msg.sender] = x + 1; }\n}\n";
        let got = run(src);
        assert_eq!(got.len(), 1, "{got:?}");
        assert_eq!(got[0].function.as_ref().unwrap().name, "d");
        assert_eq!(got[0].rule(), "BPM-GUARD");
    }

    #[test]
    fn uniform_or_small_sets_are_silent() {
        let all = "contract P {\n    uint v;\n    modifier g() { _; }\n    function a() external g { v = 1; }\n    function b() external g { v = 2; }\n    function c() external g { v = 3; }\n}\n";
        assert!(run(all).is_empty());
        let two = "contract P {\n    uint v;\n    modifier g() { _; }\n    function a() external g { v = 1; }\n    function b() external { v = 2; }\n}\n";
        assert!(run(two).is_empty());
    }
}
