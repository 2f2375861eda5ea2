mod common;

use std::collections::BTreeSet;

use common::scenario::*;
use common::{fixture_dir, FIXTURES};
use solaudit_core::catalog::FEATURES;
use solaudit_core::finding::Flag;
use solaudit_core::report::{self, AuditReport, Format};
use solaudit_core::run;
use solaudit_core::types::Severity;

fn vault_run() -> AuditReport {
    run::run(&run_config("vault_reentrancy", Some("vault_full.json"))).unwrap()
}

#[test]
fn scripted_run_reports_the_cross_pipeline_reentrancy() {
    let r = vault_run();
    assert_eq!(r.pipelines.dd_findings, 1);
    assert_eq!(r.pipelines.id_findings, 1);
    assert!(r.pipelines.id_rejected >= 1);
    let ids: BTreeSet<&str> = r.findings.iter().map(|f| f.finding.id.as_str()).collect();
    assert!(ids.contains("D-001") && ids.contains("I-001"), "{ids:?}");
    for f in r.findings.iter().filter(|f| ["D-001", "I-001"].contains(&f.finding.id.as_str())) {
        assert!(f.finding.has_flag(Flag::CrossPipeline));
        assert!(f.finding.severity >= Severity::High);
    }
    assert_eq!(r.count_at_least(Severity::High), 2);
}

#[test]
fn citations_point_at_real_source_lines() {
    let r = vault_run();
    for f in &r.findings {
        for c in &f.citations {
            let text = std::fs::read_to_string(fixture_dir("vault_reentrancy").join(&c.file)).unwrap();
            let head = text.lines().nth(c.start_line - 1).unwrap();
            let name = c.function.name.as_str();
            assert!(head.contains(name), "{head} does not declare {name}");
            assert!(c.end_line >= c.start_line);
        }
        for e in &f.evidence {
            let text = std::fs::read_to_string(fixture_dir("vault_reentrancy").join(&e.file)).unwrap();
            assert!(text.lines().nth(e.line - 1).unwrap().contains("msg.sender.call"));
        }
    }
}

#[test]
fn two_runs_produce_identical_reports() {
    let a = vault_run();
    let b = vault_run();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_markdown(), b.to_markdown());
}

#[test]
fn json_report_round_trips() {
    let a = vault_run();
    let back = AuditReport::from_json(&a.to_json()).unwrap();
    assert_eq!(back.to_json(), a.to_json());
}

#[test]
fn emit_writes_the_selected_formats() {
    let dir = tempfile::tempdir().unwrap();
    let r = vault_run();
    let paths = report::emit(&r, &[Format::Json], dir.path()).unwrap();
    assert_eq!(paths.len(), 1);
    assert!(paths[0].ends_with("report.json"));
    let paths = report::emit(&r, &[Format::Md, Format::Json], dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("D-001") && md.contains("Reduction funnel"));
}

#[test]
fn coverage_closes_after_a_scripted_run() {
    let r = vault_run();
    let cov = &r.coverage;
    let fns: BTreeSet<String> = cov.residual.entries.iter().map(|e| e.function.to_string()).collect();
    assert_eq!(fns.len(), cov.residual.entries.len(), "one status per function");
    assert_eq!(fns.len(), r.ccim.functions);
    assert!(cov.report.relevant_classes.iter().all(|c| cov.report.covered_classes.contains(c) ^ cov.report.gap_set.contains(c)));
    let withdraw = cov.residual.entries.iter().find(|e| e.function.to_string() == "Vault.withdraw").unwrap();
    assert_eq!(withdraw.status, solaudit_core::coverage::AttentionStatus::Discussed);
}

#[test]
fn offline_runs_succeed_on_every_fixture() {
    for name in FIXTURES {
        let r = run::run(&run_config(name, None)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let cov = &r.coverage;
        assert_eq!(cov.residual.entries.len(), r.ccim.functions, "{name}");
        for c in &cov.report.relevant_classes {
            assert!(cov.report.covered_classes.contains(c) != cov.report.gap_set.contains(c), "{name}: {c}");
        }
        for d in &cov.report.detected_features {
            assert!(FEATURES.features.iter().any(|f| f.id == d.id));
        }
    }
}

#[test]
fn pipelines_overlap_under_mock_delays() {
    pipelines_overlap();
}

#[test]
fn missing_format_is_an_error() {
    let mut c = run_config("vault_reentrancy", None);
    c.formats.clear();
    assert!(matches!(run::run(&c), Err(run::RunError::NoFormat)));
}
