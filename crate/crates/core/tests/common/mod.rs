#![allow(dead_code)]

pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use solaudit_core::ccim::{self, CcimModel, Footprint};
use solaudit_core::config::PipelineConfig;
use solaudit_core::dd::PipelineContext;
use solaudit_core::finding::Finding;
use solaudit_core::ingest::{self, AuditSource};
use solaudit_core::reasoner::{MockReasoner, MockScript, Reasoner};
use solaudit_core::signals::{self, MergedSignals};
use solaudit_core::types::{FnRef, Pipeline, Severity};

pub const FIXTURES: [&str; 14] = [
    "adversarial_vault",
    "amm_pair",
    "approval_router",
    "bidirectional_hooks",
    "governance_timelock",
    "guarded_vault",
    "inheritance_chain",
    "interfaces_only",
    "internal_cycles",
    "legacy_token",
    "lending_oracle",
    "math_library",
    "staking_rewards",
    "vault_reentrancy",
];

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str) -> (AuditSource, CcimModel) {
    let (source, _) = ingest::ingest(&fixture_dir(name), None).expect("fixture ingests");
    let model = ccim::build(&source);
    (source, model)
}

pub fn f(owner: &str, name: &str) -> FnRef {
    FnRef::new(owner, name)
}

/// Footprints by explicit reachability: every function reachable through
/// internal calls contributes its direct sets.
pub fn closure_oracle(model: &CcimModel) -> BTreeMap<FnRef, Footprint> {
    let by_ref: BTreeMap<FnRef, _> = model.records.iter().map(|r| (r.fn_ref(), r)).collect();
    let mut out = BTreeMap::new();
    for start in by_ref.keys() {
        let mut seen: BTreeSet<FnRef> = BTreeSet::new();
        let mut stack = vec![start.clone()];
        while let Some(g) = stack.pop() {
            if !seen.insert(g.clone()) {
                continue;
            }
            for c in &by_ref[&g].internal_calls {
                if by_ref.contains_key(c) && !seen.contains(c) {
                    stack.push(c.clone());
                }
            }
        }
        let mut fp = Footprint::default();
        for g in &seen {
            let r = by_ref[g];
            fp.reads.extend(r.reads.iter().cloned());
            fp.writes.extend(r.writes.iter().cloned());
            fp.fund |= r.fund_flag;
        }
        out.insert(start.clone(), fp);
    }
    out
}

/// Everything a pipeline context borrows, owned in one place.
pub struct Harness {
    pub source: AuditSource,
    pub model: CcimModel,
    pub signals: MergedSignals,
    pub cfg: PipelineConfig,
}

impl Harness {
    pub fn new(name: &str) -> Self {
        let (source, model) = load(name);
        let signals = signals::collect_signals(&model, &source, Vec::new(), signals::DEFAULT_SIGNAL_CAP);
        Harness {
            source,
            model,
            signals,
            cfg: PipelineConfig::default(),
        }
    }

    pub fn ctx<'a>(&'a self, reasoner: &'a dyn Reasoner) -> PipelineContext<'a> {
        PipelineContext {
            ccim: &self.model,
            source: &self.source,
            signals: &self.signals,
            reasoner,
            cfg: &self.cfg,
        }
    }

    /// Concatenation line of the first line containing `needle` inside `owner.name`.
    pub fn line_of(&self, owner: &str, name: &str, needle: &str) -> usize {
        let r = self.model.record(&FnRef::new(owner, name)).expect("record exists");
        (r.src.0..=r.src.1)
            .find(|&l| self.source.line_text(l).is_some_and(|t| t.contains(needle)))
            .unwrap_or_else(|| panic!("`{needle}` not in {owner}.{name}"))
    }
}

pub fn finding(id: &str, title: &str, severity: Severity, affected: &[(&str, &str)]) -> Finding {
    let pipeline = if id.starts_with('I') { Pipeline::I } else { Pipeline::D };
    let mut x = Finding::new(pipeline, title, severity, affected.iter().map(|(o, n)| FnRef::new(*o, *n)).collect());
    x.id = id.to_string();
    x
}

pub fn mock(script: &str) -> MockReasoner {
    MockReasoner::new(MockScript::from_json(script).expect("valid script"))
}

pub fn quiet_mock() -> MockReasoner {
    MockReasoner::new(MockScript::default())
}
