//! Scenario builders and brute-force checks shared by the test targets
//! and the acceptance harness.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use solaudit_core::calibration::{recalibrate_severity, self_contradiction_filter, RuleApplication};
use solaudit_core::ccim::{approvals_of, caller_guards, CcimModel, RoleCatalogue};
use solaudit_core::claims::SELF_DISPROVING;
use solaudit_core::dd::{phase_d_apply, phase_d_prefilter, Route};
use solaudit_core::finding::{Finding, Flag};
use solaudit_core::funnel::{restrict, run_funnel, FunnelConfig, FunnelStats, Verdict};
use solaudit_core::ingest::AuditSource;
use solaudit_core::reasoner::{stage, Reasoner};
use solaudit_core::report::AuditReport;
use solaudit_core::run::{self, RunConfig};
use solaudit_core::signals::{self, merge::rank, merge_signals, Engine, EngineFn, EngineOutput, Signal};
use solaudit_core::triage::{boost_confidence, cross_indicator, extract_card, merge, Tagging, BETA};
use solaudit_core::types::{FnRef, Pipeline, Severity, VarId};

use super::{closure_oracle, finding, fixture_dir, load, quiet_mock, Harness};

fn contract_edge(m: &CcimModel, c1: &str, c2: &str) -> bool {
    m.records.iter().filter(|r| r.owner == c1).any(|r| {
        r.call_sites.iter().any(|x| {
            m.resolution.resolve(&x.target) == Some(c2) && m.records.iter().any(|g| g.owner == c2 && g.name == x.method)
        })
    })
}

fn expected_gap(m: &CcimModel, c1: &str, c2: &str) -> bool {
    if !contract_edge(m, c1, c2) {
        return false;
    }
    let mut assumed = BTreeSet::new();
    for r in m.records.iter().filter(|r| r.owner == c1) {
        for x in &r.call_sites {
            if m.resolution.resolve(&x.target) != Some(c2) {
                continue;
            }
            for g in m.records.iter().filter(|g| g.owner == c2 && g.name == x.method) {
                assumed.extend(g.posts.iter().cloned());
            }
        }
    }
    let cat = RoleCatalogue::default().compiled();
    let enforced: BTreeSet<String> = m.records.iter().filter(|g| g.owner == c2).flat_map(|g| caller_guards(g, &cat)).collect();
    !assumed.is_subset(&enforced)
}

/// Footprints, rot, trustgap and callback of one fixture against brute force.
pub fn check_ccim_fixture(name: &str) {
    let (_, m) = load(name);
    let oracle = closure_oracle(&m);
    assert_eq!(oracle.len(), m.footprints.per_function.len(), "{name}: footprint domain");
    for (g, want) in &oracle {
        assert_eq!(m.footprints.get(g), Some(want), "{name}: footprint of {g}");
    }

    let mut vars: BTreeSet<VarId> = m.resolution.type_map.keys().cloned().collect();
    vars.extend(m.deps.writers.keys().cloned());
    for v in &vars {
        let admin_writer = oracle.iter().any(|(g, fp)| fp.writes.contains(v) && m.admin_set.contains(g));
        let used = m
            .records
            .iter()
            .any(|r| r.call_sites.iter().any(|x| &x.target == v) || approvals_of(r).contains(v));
        assert_eq!(m.deps.rot.contains(v), admin_writer && used, "{name}: rot({v})");
    }

    let names: Vec<&str> = m.contracts.iter().map(|c| c.name.as_str()).collect();
    for a in &names {
        for b in &names {
            assert_eq!(m.trust.trustgap(a, b), expected_gap(&m, a, b), "{name}: trustgap({a}, {b})");
            if a <= b {
                let both = contract_edge(&m, a, b) && contract_edge(&m, b, a);
                let key = (a.to_string(), b.to_string());
                assert_eq!(m.trust.callbacks.contains(&key), both, "{name}: callback({a}, {b})");
            }
        }
    }
}

/// One refutable hallucination per claim type, one fabricated function and
/// a genuine reentrancy reported by both pipelines.
pub fn adversarial(h: &Harness) -> (Vec<Finding>, Vec<Finding>) {
    let call = h.line_of("Bank", "claim", "msg.sender.call");
    let mut fd = vec![
        finding("D-001", "Race condition between deposit and withdraw", Severity::Medium, &[("Bank", "deposit"), ("Bank", "withdraw")]),
        finding("D-002", "Missing access control on setFee", Severity::High, &[("Bank", "setFee")]),
        finding("D-003", "Reentrancy in withdraw drains the bank", Severity::High, &[("Bank", "withdraw")]),
        finding("D-004", "Integer overflow in deposit accounting", Severity::Medium, &[("Bank", "deposit")]),
        finding("D-005", "Attacker drains funds through emergencyDrain", Severity::Critical, &[("Bank", "emergencyDrain")]),
        finding("D-006", "Reentrancy in claim lets an attacker drain rewards", Severity::High, &[("Bank", "claim")]),
    ];
    fd[5].evidence_lines = vec![call];
    fd[5].description = "claim sends the owed ether before zeroing rewards[msg.sender].".into();
    let mut gi = finding("I-001", "Claim pays out before zeroing rewards, reentrancy drains the bank", Severity::High, &[("Bank", "claim")]);
    gi.evidence_lines = vec![call];
    (fd, vec![gi])
}

/// Survivors after each barrier, reconstructed from the verdict log.
pub fn stage_survivors(input: &[Finding], stats: &FunnelStats) -> Vec<(BTreeSet<String>, BTreeSet<String>)> {
    let mut current: BTreeSet<String> = input.iter().map(|f| f.id.clone()).collect();
    let mut out = Vec::new();
    let mut at = 0;
    for s in &stats.stages {
        let records = &stats.records[at..at + s.input];
        at += s.input;
        let seen: BTreeSet<String> = records.iter().map(|r| r.finding.clone()).collect();
        assert_eq!(seen, current, "{} sees exactly the previous survivors", s.stage);
        let kept: BTreeSet<String> = records.iter().filter(|r| !r.verdict.removes()).map(|r| r.finding.clone()).collect();
        assert_eq!(kept.len(), s.output);
        out.push((current.clone(), kept.clone()));
        current = kept;
    }
    out
}

/// Reentrancy finding on `Bank.claim` citing the call line.
pub fn vector_candidate(h: &Harness, confidence: f64, trace_len: usize) -> Finding {
    let mut f = finding("D-001", "Reentrancy in claim drains rewards", Severity::High, &[("Bank", "claim")]);
    f.evidence_lines = vec![h.line_of("Bank", "claim", "msg.sender.call")];
    f.confidence = confidence;
    f.proof_trace = "x".repeat(trace_len);
    f
}

const SEVERITIES: [Severity; 5] = [Severity::Info, Severity::Low, Severity::Medium, Severity::High, Severity::Critical];

/// `n` signals spread over three engines with mixed severities.
pub fn synthetic_signals(n: usize) -> Vec<EngineOutput> {
    let engines = [Engine::Bva, Engine::Ira, Engine::Cir];
    let mut outs: Vec<EngineOutput> = engines
        .iter()
        .map(|e| EngineOutput { engine: e.as_str().into(), signals: Vec::new(), error: None })
        .collect();
    for i in 0..n {
        let sev = SEVERITIES[(i * 7) % 5];
        let conf = ((i * 37) % 100) as f64 / 100.0;
        let s = Signal::new(engines[i % 3], "SYN-RULE", i, sev, conf, "synthetic").on(FnRef::new("C", format!("f{}", i % 9)));
        outs[i % 3].signals.push(s);
    }
    outs
}

pub fn fired_rules(log: &[RuleApplication]) -> Vec<u8> {
    log.iter().map(|a| a.rule).collect()
}

/// Fires `rule` on `subject` and leaves `control` untouched.
pub fn check_rule(h: &Harness, rule: u8, subject: Finding, want: Severity, control: Finding) {
    let (out, log) = recalibrate_severity(vec![subject], &h.model);
    assert_eq!(fired_rules(&log), vec![rule], "{log:?}");
    assert_eq!(out[0].severity, want);
    let before = control.clone();
    let (out, log) = recalibrate_severity(vec![control], &h.model);
    assert!(log.is_empty(), "control fired: {log:?}");
    assert_eq!(out, vec![before]);
}

pub fn rule1_admin_only_without_funds(h: &Harness) {
    check_rule(
        h,
        1,
        finding("D-1", "Fee can be set to any value", Severity::High, &[("Bank", "setFee")]),
        Severity::Low,
        finding("D-2", "Reward payout drains the bank", Severity::High, &[("Bank", "claim")]),
    );
}

pub fn rule2_no_fund_path(h: &Harness) {
    check_rule(
        h,
        2,
        finding("D-1", "Reward accrual rounds to zero", Severity::High, &[("Bank", "deposit")]),
        Severity::Medium,
        finding("D-2", "Reward accrual rounds to zero", Severity::Medium, &[("Bank", "deposit")]),
    );
}

pub fn rule3_unlikely_preconditions(h: &Harness) {
    let mut subject = finding("D-1", "Reward payout drains the bank", Severity::High, &[("Bank", "claim")]);
    subject.description = "Works only if the receiver is a contract, assuming a fallback that reenters, provided that rewards are large.".into();
    let mut control = finding("D-2", "Reward payout drains the bank", Severity::High, &[("Bank", "claim")]);
    control.description = "Works only if the receiver is a contract, assuming a fallback that reenters.".into();
    check_rule(h, 3, subject, Severity::Medium, control);
}

pub fn rule4_hedged_without_steps(h: &Harness) {
    let mut subject = finding("D-1", "Reward payout drains the bank", Severity::Critical, &[("Bank", "claim")]);
    subject.description = "An attacker could potentially re-enter the payout.".into();
    let mut control = subject.clone();
    control.id = "D-2".into();
    control.attack_scenario = "1. Deposit from a contract. 2. Call claim and re-enter from the fallback. 3. Repeat.".into();
    check_rule(h, 4, subject, Severity::Medium, control);
}

pub fn rule5_one_per_root_cause(h: &Harness) {
    let a = finding("D-1", "Reward payout drains the bank", Severity::High, &[("Bank", "claim")]);
    let b = finding("D-2", "Claim can drain the bank", Severity::Critical, &[("Bank", "claim")]);
    let (out, log) = recalibrate_severity(vec![a.clone(), b], &h.model);
    assert_eq!(fired_rules(&log), vec![5]);
    assert_eq!(log[0].finding, "D-1");
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].id, "D-2");

    let c = finding("D-3", "Withdraw can drain the bank", Severity::High, &[("Bank", "withdraw")]);
    let (out, log) = recalibrate_severity(vec![a, c], &h.model);
    assert!(log.is_empty());
    assert_eq!(out.len(), 2);
}

pub fn rule6_access_evidence(h: &Harness) {
    let down = finding("D-1", "Missing access control on sweep drains the bank", Severity::High, &[("Bank", "sweep")]);
    let (out, log) = recalibrate_severity(vec![down], &h.model);
    assert_eq!(fired_rules(&log), vec![6]);
    assert_eq!(out[0].severity, Severity::Low);
    assert!(out[0].has_flag(Flag::AccessEvidenceCorrected));

    let mut up = finding("D-2", "Only the owner can trigger the reward payout", Severity::Medium, &[("Bank", "claim")]);
    up.description = "Payout drains the bank.".into();
    let (out, log) = recalibrate_severity(vec![up], &h.model);
    assert_eq!(fired_rules(&log), vec![6]);
    assert_eq!(out[0].severity, Severity::High);

    let control = finding("D-3", "Missing access control on claim drains the bank", Severity::High, &[("Bank", "claim")]);
    let (out, log) = recalibrate_severity(vec![control.clone()], &h.model);
    assert!(log.is_empty());
    assert_eq!(out, vec![control]);
}

pub fn self_disproving_phrases() {
    for (i, phrase) in SELF_DISPROVING.iter().enumerate() {
        let mut bare = finding(&format!("I-{i}"), "Fee rounding", Severity::Medium, &[("Bank", "feeOn")]);
        bare.description = format!("Rounding down here is {phrase}.");
        let mut cited = bare.clone();
        cited.id = format!("I-{i}b");
        cited.evidence_lines = vec![50];
        let control = finding("I-ctl", "Fee rounding", Severity::Medium, &[("Bank", "feeOn")]);
        let (kept, outcome) = self_contradiction_filter(vec![bare, cited, control.clone()]);
        assert_eq!(outcome.removed, vec![format!("I-{i}")], "{phrase}");
        assert_eq!(outcome.downgraded, vec![format!("I-{i}b")], "{phrase}");
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].severity, Severity::Info);
        assert!(kept[0].has_flag(Flag::SelfContradictory));
        assert_eq!(kept[1], control);
    }
}

/// The adversarial set collapses to the genuine pair without any reasoner
/// call in the deterministic stages.
pub fn funnel_filters_adversarial_set(h: &Harness) {
    let reasoner = quiet_mock();
    let ctx = h.ctx(&reasoner);
    let (fd, fi) = adversarial(h);
    let merged = merge(fd, fi, &h.model).unwrap();
    assert_eq!(merged.chi("D-006"), 1);
    assert_eq!(merged.chi("D-001"), 0);

    let (out, stats) = run_funnel(&merged, &ctx, &FunnelConfig::default());
    let ids: BTreeSet<&str> = out.iter().map(|f| f.id.as_str()).collect();
    assert_eq!(ids, BTreeSet::from(["D-006", "I-001"]));
    for f in &out {
        assert!(f.has_flag(Flag::CrossPipeline));
        assert_eq!(f.confidence, merged.conf_post[&f.id]);
    }

    for s in [stage::STAGE1, stage::STAGE2, stage::SVE_L1] {
        assert_eq!(reasoner.call_count(s), 0, "{s}");
    }
    let by = |id: &str| stats.records.iter().find(|r| r.finding == id && r.verdict.removes()).unwrap();
    for id in ["D-001", "D-002", "D-003", "D-004"] {
        assert_eq!((by(id).stage, by(id).verdict), (1, Verdict::Disproved), "{id}");
        assert!(!by(id).lines.is_empty(), "{id} cites a line");
    }
    assert_eq!((by("D-005").stage, by("D-005").verdict), (2, Verdict::Filtered));
    assert_eq!(by("D-005").evidence, "unresolvable");
}

pub fn funnel_stages_shrink(h: &Harness) {
    let reasoner = quiet_mock();
    let (fd, fi) = adversarial(h);
    let merged = merge(fd, fi, &h.model).unwrap();
    let (out, stats) = run_funnel(&merged, &h.ctx(&reasoner), &FunnelConfig::default());
    let stages = stage_survivors(&merged.findings, &stats);
    assert_eq!(stages.len(), 6);
    for (input, output) in &stages {
        assert!(output.is_subset(input));
    }
    let last: BTreeSet<String> = out.iter().map(|f| f.id.clone()).collect();
    assert_eq!(stages.last().unwrap().1, last);
}

pub fn funnel_idempotent(h: &Harness) {
    let reasoner = quiet_mock();
    let ctx = h.ctx(&reasoner);
    let (fd, fi) = adversarial(h);
    let merged = merge(fd, fi, &h.model).unwrap();
    let (once, _) = run_funnel(&merged, &ctx, &FunnelConfig::default());
    let (twice, stats) = run_funnel(&restrict(&merged, &once), &ctx, &FunnelConfig::default());
    assert_eq!(once, twice);
    assert_eq!(stats.input, stats.output);
}

pub fn admin_trust_route(h: &Harness) {
    let reasoner = quiet_mock();
    for sev in [Severity::Critical, Severity::High, Severity::Medium, Severity::Info] {
        let f = finding("D-002", "Owner can set an arbitrary fee", sev, &[("Bank", "setFee")]);
        assert_eq!(phase_d_prefilter(&f, &h.model, &h.signals, &h.cfg), Route::AdminTrust);
        let (kept, rec) = phase_d_apply(&h.ctx(&reasoner), f, stage::PHASE_D);
        let kept = kept.unwrap();
        assert_eq!(kept.severity, Severity::Low);
        assert!(kept.has_flag(Flag::AdminTrust));
        assert!(!rec.reasoner_used);
    }
    assert_eq!(reasoner.total_calls(), 0);
}

pub fn vector_route_at_thresholds(h: &Harness) {
    assert_eq!(h.cfg.vector_min_confidence, 0.8);
    assert_eq!(h.cfg.vector_min_trace, 30);
    let at = vector_candidate(h, 0.8, 30);
    assert_eq!(phase_d_prefilter(&at, &h.model, &h.signals, &h.cfg), Route::VectorConfirmed);
    let reasoner = quiet_mock();
    let (kept, rec) = phase_d_apply(&h.ctx(&reasoner), at, stage::PHASE_D);
    assert!(kept.unwrap().has_flag(Flag::VectorConfirmed));
    assert!(!rec.reasoner_used && reasoner.total_calls() == 0);
}

pub fn vector_route_below_thresholds(h: &Harness) {
    for (conf, trace) in [(0.79, 30), (0.8, 29), (0.79, 29)] {
        let f = vector_candidate(h, conf, trace);
        assert_eq!(phase_d_prefilter(&f, &h.model, &h.signals, &h.cfg), Route::NeedsReasoner, "{conf}/{trace}");
    }
    let mut no_evidence = vector_candidate(h, 0.9, 40);
    no_evidence.evidence_lines.clear();
    assert_eq!(phase_d_prefilter(&no_evidence, &h.model, &h.signals, &h.cfg), Route::NeedsReasoner);
}

pub fn graph_skip_route(h: &Harness) {
    let reasoner = quiet_mock();
    let f = finding("D-003", "Fee quote rounds down", Severity::Low, &[("Bank", "feeOn")]);
    assert_eq!(phase_d_prefilter(&f, &h.model, &h.signals, &h.cfg), Route::GraphSkip);
    let (kept, rec) = phase_d_apply(&h.ctx(&reasoner), f, stage::PHASE_D);
    assert!(kept.is_none() && !rec.reasoner_used);
    assert_eq!(reasoner.total_calls(), 0);
}

pub fn sixty_signals_capped_at_fifty() {
    let outs = synthetic_signals(60);
    let pool: Vec<Signal> = outs.iter().flat_map(|o| o.signals.clone()).collect();
    let merged = merge_signals(outs, signals::DEFAULT_SIGNAL_CAP);
    assert_eq!(merged.len(), 50);
    assert!(merged.cap_applied);
    let kept = merged.all();
    assert!(kept.windows(2).all(|w| w[0].severity >= w[1].severity));
    assert!(kept.windows(2).all(|w| rank(w[0], w[1]).is_le()));
    let ids: BTreeSet<&str> = kept.iter().map(|s| s.id.as_str()).collect();
    let weakest = kept.last().unwrap();
    for s in pool.iter().filter(|s| !ids.contains(s.id.as_str())) {
        assert!(s.severity <= weakest.severity, "dropped {} outranks a kept signal", s.id);
        assert!(rank(weakest, s).is_lt());
    }
    let before: usize = merged.stats.values().map(|s| s.before).sum();
    let after: usize = merged.stats.values().map(|s| s.after).sum();
    assert_eq!((before, after), (60, 50));
}

fn exploding(_: &CcimModel, _: &AuditSource) -> Vec<Signal> {
    panic!("deliberate failure")
}

pub fn throwing_engine_isolated() {
    let (source, model) = load("vault_reentrancy");
    let healthy = signals::run_engines(&signals::builtin_engines(), &model, &source);
    let mut engines = signals::builtin_engines();
    engines.insert(2, ("EXPLODING", exploding as EngineFn));
    let outputs = signals::run_engines(&engines, &model, &source);
    assert_eq!(outputs.len(), engines.len());
    assert!(outputs[2].signals.is_empty());
    assert_eq!(outputs[2].error.as_deref(), Some("deliberate failure"));

    let merged = merge_signals(outputs, 50);
    let reference = merge_signals(healthy, 50);
    assert_eq!(merged.failures.len(), 1);
    assert_eq!(merged.failures[0].engine, "EXPLODING");
    assert_eq!(merged.per_engine, reference.per_engine);
    assert!(!merged.is_empty());
}

pub fn run_config(fixture: &str, script: Option<&str>) -> RunConfig {
    RunConfig {
        path: fixture_dir(fixture),
        mock_script: script.map(|s| fixture_dir("mocks").join(s)),
        ..RunConfig::default()
    }
}

/// Every function has exactly one attention status and every relevant
/// class is covered or a gap, never both.
pub fn check_coverage_closure(r: &AuditReport) {
    let cov = &r.coverage;
    let fns: BTreeSet<String> = cov.residual.entries.iter().map(|e| e.function.to_string()).collect();
    assert_eq!(fns.len(), cov.residual.entries.len(), "one status per function");
    assert_eq!(fns.len(), r.ccim.functions);
    for c in &cov.report.relevant_classes {
        assert!(cov.report.covered_classes.contains(c) ^ cov.report.gap_set.contains(c), "{c}");
    }
}

pub fn pipelines_overlap() {
    let r = run::run(&run_config("vault_reentrancy", Some("vault_delayed.json"))).unwrap();
    let wall = r.timings.pipelines.as_millis();
    assert!((400..700).contains(&wall), "pipeline wall time {wall} ms");
    assert!(r.timings.dd.as_millis() >= 400 && r.timings.id.as_millis() >= 300);
}

fn boost_grid() -> Vec<f64> {
    (1..=19).map(|k| f64::from(k) / 20.0).collect()
}

pub fn boost_grid_exact() {
    for conf in boost_grid() {
        for chi in [0u8, 1] {
            let want = 0.95f64.min(conf + 0.30 * f64::from(chi));
            let got = boost_confidence(conf, chi).unwrap();
            assert_eq!(got.to_bits(), want.to_bits(), "conf={conf} chi={chi}");
        }
    }
    assert_eq!(BETA, 0.30);
}

pub fn chi_matches_every_labeling() {
    for n in 1..=4usize {
        let ids: Vec<String> = (0..n).map(|i| format!("X-{i}")).collect();
        let cluster: BTreeSet<String> = ids.iter().cloned().collect();
        for mask in 0u32..(1 << n) {
            let pi: Tagging = ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), if mask >> i & 1 == 1 { Pipeline::I } else { Pipeline::D }))
                .collect();
            let has_d = (0..n).any(|i| mask >> i & 1 == 0);
            let has_i = (0..n).any(|i| mask >> i & 1 == 1);
            assert_eq!(cross_indicator(&cluster, &pi), u8::from(has_d && has_i), "n={n} mask={mask:b}");
        }
    }
}

const TITLES: [&str; 6] = [
    "Reentrancy drains the vault",
    "Attacker can steal deposits",
    "Funds locked after failed transfer",
    "Unbounded loop causes denial of service",
    "Balance accounting becomes inconsistent state",
    "Owner takeover through unprotected setter",
];

fn random_finding(rng: &mut StdRng, m: &CcimModel, pipeline: Pipeline, n: usize) -> Finding {
    let mut pool: Vec<FnRef> = m.records.iter().map(|r| r.fn_ref()).collect();
    pool.push(FnRef::new("Ghost", "missing"));
    let k = rng.gen_range(0..=2);
    let affected: Vec<FnRef> = (0..k).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    let mut f = Finding::new(pipeline, TITLES[rng.gen_range(0..TITLES.len())], Severity::High, affected.clone());
    f.id = format!("{}-{n:03}", pipeline.id_prefix());
    f.confidence = f64::from(rng.gen_range(1..=19u32)) / 20.0;
    if let Some(r) = affected.first().and_then(|g| m.record(g)) {
        if rng.gen_bool(0.5) {
            f.evidence_lines = vec![rng.gen_range(r.src.0..=r.src.1)];
        }
    }
    f
}

pub fn random_set(rng: &mut StdRng, m: &CcimModel, max: usize) -> (Vec<Finding>, Vec<Finding>) {
    let nd = rng.gen_range(0..=max);
    let ni = rng.gen_range(0..=max);
    let fd = (1..=nd).map(|i| random_finding(rng, m, Pipeline::D, i)).collect();
    let fi = (1..=ni).map(|i| random_finding(rng, m, Pipeline::I, i)).collect();
    (fd, fi)
}

pub fn partition_laws(rounds: usize) {
    let (_, m) = load("vault_reentrancy");
    let (_, m2) = load("amm_pair");
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for round in 0..rounds {
        let model = if round % 2 == 0 { &m } else { &m2 };
        let (fd, fi) = random_set(&mut rng, model, 4);
        let merged = merge(fd.clone(), fi.clone(), model).unwrap();
        let ids: BTreeSet<String> = fd.iter().chain(&fi).map(|f| f.id.clone()).collect();
        assert!(merged.partition.is_partition_of(&ids), "round {round}");

        // Same cluster exactly when the root-cause keys agree.
        let keys: BTreeMap<String, _> = fd
            .iter()
            .chain(&fi)
            .map(|f| {
                let c = extract_card(f, model);
                (f.id.clone(), (c.vulnerable_function, c.abused_state_variable, c.impact_class))
            })
            .collect();
        for a in &ids {
            for b in &ids {
                let same = merged.partition.sc[a] == merged.partition.sc[b];
                assert_eq!(same, keys[a] == keys[b], "round {round}: {a} {b}");
            }
        }

        for f in &merged.findings {
            let cluster = &merged.partition.clusters[merged.partition.sc[&f.id]];
            let both = cluster.iter().any(|id| id.starts_with('D')) && cluster.iter().any(|id| id.starts_with('I'));
            assert_eq!(merged.chi(&f.id), u8::from(both));
            assert_eq!(f.has_flag(Flag::CrossPipeline), both);
            let want = 0.95f64.min(f.confidence + 0.30 * f64::from(u8::from(both)));
            assert_eq!(merged.conf_post[&f.id], want);
        }

        // Swapping the pipelines relabels the tagging but keeps the partition.
        let swapped = merge(fi, fd, model).unwrap();
        assert_eq!(swapped.partition, merged.partition, "round {round}");
        assert_eq!(swapped.conf_post, merged.conf_post);
    }
}
