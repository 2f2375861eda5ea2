use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use solaudit_core::report::{self, Format};
use solaudit_core::run::{self, RunConfig};
use solaudit_core::signals::ExternalTool;
use solaudit_core::types::Severity;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Json,
}

/// Audit a Solidity repository or file.
///
/// Exit status: 0 when no finding reaches the severity gate, 1 when one
/// does, 2 on a run error.
#[derive(Debug, Parser)]
#[command(name = "solaudit", version)]
struct Args {
    /// Repository root or single `.sol` file.
    #[arg(long)]
    path: PathBuf,
    /// Comma-separated contract names replacing the default scope.
    #[arg(long, value_delimiter = ',')]
    scope: Option<Vec<String>>,
    /// Global cap on retained deterministic signals.
    #[arg(long, default_value_t = 50)]
    signal_cap: usize,
    /// Character budget of verification source extracts.
    #[arg(long, default_value_t = 24_000)]
    char_budget: usize,
    /// Scripted reasoner responses; without one, reasoning stages run offline.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "solaudit-out")]
    out: PathBuf,
    /// Report formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FormatArg::Md, FormatArg::Json])]
    format: Vec<FormatArg>,
    /// Lowest severity that makes the exit status 1.
    #[arg(long, default_value = "high", value_parser = parse_severity)]
    severity_gate: Severity,
    /// External tool report, `SLI:path` or `MYT:path`; no prefix means SLI.
    #[arg(long, value_parser = parse_external)]
    external_signals: Vec<(ExternalTool, PathBuf)>,
    /// Closed-loop re-audit rounds.
    #[arg(long, default_value_t = 1)]
    reaudit_rounds: usize,
}

fn parse_severity(s: &str) -> Result<Severity, String> {
    Severity::parse_loose(s).ok_or_else(|| format!("unknown severity `{s}`"))
}

fn parse_external(s: &str) -> Result<(ExternalTool, PathBuf), String> {
    match s.split_once(':') {
        Some(("SLI", p)) => Ok((ExternalTool::Slither, p.into())),
        Some(("MYT", p)) => Ok((ExternalTool::Mythril, p.into())),
        _ => Ok((ExternalTool::Slither, s.into())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let mut formats: Vec<Format> = args
        .format
        .iter()
        .map(|f| match f {
            FormatArg::Md => Format::Md,
            FormatArg::Json => Format::Json,
        })
        .collect();
    formats.sort();
    formats.dedup();
    let config = RunConfig {
        path: args.path,
        scope: args.scope,
        signal_cap: args.signal_cap,
        char_budget: args.char_budget,
        mock_script: args.mock_script,
        out: args.out,
        formats,
        severity_gate: args.severity_gate,
        external_signals: args.external_signals,
        reaudit_rounds: args.reaudit_rounds,
        ..RunConfig::default()
    };
    let report = match run::run(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match report::emit(&report, &config.formats, &config.out) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", config.out.display());
            return ExitCode::from(2);
        }
    }
    let gated = report.count_at_least(config.severity_gate);
    println!(
        "{} findings, {gated} at or above {}; reports in {}",
        report.findings.len(),
        config.severity_gate,
        config.out.display()
    );
    if gated > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
