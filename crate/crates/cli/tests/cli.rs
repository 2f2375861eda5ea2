use std::path::PathBuf;
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn solaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solaudit")).args(args).output().expect("binary runs")
}

fn vault() -> String {
    fixtures().join("vault_reentrancy").display().to_string()
}

fn script() -> String {
    fixtures().join("mocks/vault_full.json").display().to_string()
}

#[test]
fn clean_offline_run_exits_zero_with_both_reports() {
    let out = tempfile::tempdir().unwrap();
    let o = solaudit(&["--path", &vault(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.path().join("report.md").is_file());
    assert!(out.path().join("report.json").is_file());
}

#[test]
fn single_format_writes_one_file() {
    let out = tempfile::tempdir().unwrap();
    let o = solaudit(&["--path", &vault(), "--out", out.path().to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<_> = std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("report.json")]);
}

#[test]
fn gated_findings_exit_one() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let o = solaudit(&["--path", &vault(), "--mock-script", &script(), "--out", dir]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 at or above HIGH"));
    let o = solaudit(&["--path", &vault(), "--mock-script", &script(), "--out", dir, "--severity-gate", "critical"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn run_errors_exit_two() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let missing = fixtures().join("no_such_repo").display().to_string();
    assert_eq!(solaudit(&["--path", &missing, "--out", dir]).status.code(), Some(2));
    let bad = out.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let o = solaudit(&["--path", &vault(), "--mock-script", bad.to_str().unwrap(), "--out", dir]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mock script"));
}

#[test]
fn external_signals_are_merged() {
    let out = tempfile::tempdir().unwrap();
    let report = out.path().join("slither.json");
    std::fs::write(
        &report,
        r#"[{"detector": "reentrancy-eth", "description": "external call before write", "severity": "High", "file": "src/Vault.sol", "line": 23}]"#,
    )
    .unwrap();
    let dir = out.path().join("out");
    let o = solaudit(&[
        "--path",
        &vault(),
        "--out",
        dir.to_str().unwrap(),
        "--format",
        "json",
        "--external-signals",
        &format!("SLI:{}", report.display()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let compact: String = json.split_whitespace().collect();
    assert!(compact.contains(r#""SLI":{"before":1,"after":1}"#), "external signal missing from report");
}
