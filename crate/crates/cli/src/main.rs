//! `dsmsim` — run, check and compare deterministic replicated-memory
//! simulations described by JSON scenario files.
//!
//! Exit codes: 0 all verdicts ok, 1 verdict failure, 2 usage or parse error.

use clap::{Parser, Subcommand};
use dsmsim::{check_trace, compare_costs, rollback_restart, run_scenario, sweep};
use dsmsim::{load_scenario, EngineKind, Trace, Verdict};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dsmsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to quiescence and print the verdicts.
    Run {
        scenario: PathBuf,
        /// Write the full event trace as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Verify a persisted trace against a consistency model.
    Check {
        trace: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Run the same workload under all four models and print a checkpoint
    /// cost table.
    Compare { scenario: PathBuf },
    /// Run a scenario across a seed range and aggregate verdicts.
    Sweep {
        scenario: PathBuf,
        /// Inclusive seed range, e.g. 0..99.
        #[arg(long)]
        seeds: String,
    },
    /// Crash, persist the latest checkpoint, restart from the file and
    /// verify the combined run.
    RollbackTest {
        scenario: PathBuf,
        /// Where to persist the checkpoint (default: alongside the scenario).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn verdict_exit(verdicts: &BTreeMap<String, Verdict>) -> ExitCode {
    for (name, v) in verdicts {
        println!("{name}: {}", v.summary());
    }
    if verdicts.values().any(|v| v.is_violation()) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn parse_seed_range(s: &str) -> anyhow::Result<std::ops::RangeInclusive<u64>> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("seed range must look like A..B, got `{s}`"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    Ok(a.trim().parse()?..=b.trim().parse()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, trace } => {
            let sc = load_scenario(&scenario)?;
            let report = run_scenario(&sc)?;
            if let Some(path) = trace {
                report.trace.write_jsonl(&path)?;
                println!("trace: {}", path.display());
            }
            for c in &report.costs {
                println!(
                    "checkpoint epoch {}: full_states={} incremental_updates={} bytes={}",
                    c.epoch, c.full_replica_states_recorded, c.incremental_update_count,
                    c.bytes_estimate
                );
            }
            Ok(verdict_exit(&report.verdicts))
        }
        Command::Check { trace, model } => {
            let model: EngineKind = model.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            let trace = Trace::read_jsonl(&trace)?;
            Ok(verdict_exit(&check_trace(&trace, model)))
        }
        Command::Compare { scenario } => {
            let sc = load_scenario(&scenario)?;
            let rows = compare_costs(&sc)?;
            println!("{:<10} {:>12} {:>20} {:>10}", "model", "full_states", "incremental_updates", "bytes");
            for r in &rows {
                println!(
                    "{:<10} {:>12} {:>20} {:>10}",
                    r.model.to_string(),
                    r.full_states,
                    r.incremental_updates,
                    r.bytes
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { scenario, seeds } => {
            let sc = load_scenario(&scenario)?;
            let range = parse_seed_range(&seeds)?;
            let summary = sweep(&sc, range)?;
            println!("{}/{} runs passed", summary.passed, summary.runs);
            if let Some((seed, lines)) = &summary.first_failure {
                println!("first failure at seed {seed}:");
                for line in lines {
                    println!("  {line}");
                }
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RollbackTest { scenario, checkpoint } => {
            let sc = load_scenario(&scenario)?;
            let ckpt = checkpoint.unwrap_or_else(|| scenario.with_extension("ckpt.json"));
            let report = rollback_restart(&sc, &ckpt)?;
            println!("checkpoint: {}", ckpt.display());
            Ok(verdict_exit(&report.verdicts))
        }
    }
}
