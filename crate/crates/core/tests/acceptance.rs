//! Acceptance report: one PASS or FAIL line per criterion. Each criterion
//! is a list of checks that panic on violation; a criterion passes when
//! none of them does. The process exits nonzero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::scenario::*;
use common::{Harness, FIXTURES};
use solaudit_core::run;

type Check = (&'static str, Box<dyn Fn()>);

fn check(name: &'static str, f: impl Fn() + 'static) -> Check {
    (name, Box::new(f))
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".to_string())
}

/// Runs every check and returns the failures.
fn evaluate(checks: &[Check]) -> Vec<String> {
    checks
        .iter()
        .filter_map(|(name, f)| {
            panic::catch_unwind(AssertUnwindSafe(f)).err().map(|e| format!("{name}: {}", panic_message(e.as_ref())))
        })
        .collect()
}

fn vault() -> Harness {
    Harness::new("adversarial_vault")
}

fn criteria() -> Vec<(&'static str, Vec<Check>)> {
    vec![
        (
            "CCIM oracle equivalence",
            vec![check("corpus", || {
                assert!(FIXTURES.len() >= 10, "only {} fixtures", FIXTURES.len());
                let t = Instant::now();
                for name in FIXTURES {
                    check_ccim_fixture(name);
                }
                assert!(t.elapsed().as_secs_f64() < 5.0, "took {:?}", t.elapsed());
            })],
        ),
        (
            "merge algebra exactness",
            vec![
                check("boost grid", boost_grid_exact),
                check("cross indicator labelings", chi_matches_every_labeling),
                check("partition laws", || partition_laws(1000)),
            ],
        ),
        (
            "reduction funnel",
            vec![
                check("adversarial set", || funnel_filters_adversarial_set(&vault())),
                check("stage subsets", || funnel_stages_shrink(&vault())),
                check("idempotence", || funnel_idempotent(&vault())),
            ],
        ),
        (
            "claim-first routing",
            vec![
                check("admin trust", || admin_trust_route(&vault())),
                check("vector confirmed", || vector_route_at_thresholds(&vault())),
                check("vector boundary", || vector_route_below_thresholds(&vault())),
                check("graph skip", || graph_skip_route(&vault())),
            ],
        ),
        (
            "signal merger",
            vec![
                check("cap", sixty_signals_capped_at_fifty),
                check("engine isolation", throwing_engine_isolated),
            ],
        ),
        (
            "severity recalibration",
            vec![
                check("rule 1", || rule1_admin_only_without_funds(&vault())),
                check("rule 2", || rule2_no_fund_path(&vault())),
                check("rule 3", || rule3_unlikely_preconditions(&vault())),
                check("rule 4", || rule4_hedged_without_steps(&vault())),
                check("rule 5", || rule5_one_per_root_cause(&vault())),
                check("rule 6", || rule6_access_evidence(&vault())),
                check("self-contradiction phrases", self_disproving_phrases),
            ],
        ),
        (
            "coverage closure",
            vec![
                check("scripted run", || {
                    check_coverage_closure(&run::run(&run_config("vault_reentrancy", Some("vault_full.json"))).unwrap());
                }),
                check("offline runs", || {
                    for name in FIXTURES {
                        check_coverage_closure(&run::run(&run_config(name, None)).unwrap());
                    }
                }),
            ],
        ),
        (
            "determinism and concurrency",
            vec![
                check("byte-identical reports", || {
                    let cfg = run_config("vault_reentrancy", Some("vault_full.json"));
                    let (a, b) = (run::run(&cfg).unwrap(), run::run(&cfg).unwrap());
                    assert_eq!(a.to_json(), b.to_json());
                    assert_eq!(a.to_markdown(), b.to_markdown());
                }),
                check("pipeline overlap", pipelines_overlap),
            ],
        ),
    ]
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, checks)) in criteria().iter().enumerate() {
        let t = Instant::now();
        let failures = evaluate(checks);
        let ms = t.elapsed().as_millis();
        if failures.is_empty() {
            println!("PASS {} {name} ({} checks, {ms} ms)", i + 1, checks.len());
        } else {
            failed += 1;
            println!("FAIL {} {name}: {}", i + 1, failures.join("; "));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
