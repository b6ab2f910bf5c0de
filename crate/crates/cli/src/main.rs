use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use metaloop_core::runtime::{
    check_invariants, compare_conditions, read_events, run_session, scores_from_events, Comparison, Condition,
    RuntimeConfig,
};
use metaloop_core::simbench::{aggregate, write_scores_csv};
use serde_json::json;

#[derive(Parser)]
#[command(name = "metaloop", version, about = "Skill evolution and idle-time policy training on a simulated workday benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one session and print its summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_condition)]
        condition: Option<Condition>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for events.jsonl, report.json, scores.csv and stream.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmarks.
    Bench {
        #[command(subcommand)]
        command: BenchCmd,
    },
    /// Re-check a session event log.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        assert_invariants: bool,
    },
    /// Re-aggregate metrics from an event log.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        out: Format,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Run baseline, skills_only and full on the same stream.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

fn load_config(path: Option<&Path>) -> Result<RuntimeConfig> {
    let cfg = match path {
        Some(p) => RuntimeConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RuntimeConfig::default(),
    };
    Ok(cfg.apply_env()?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_run(config: Option<PathBuf>, condition: Option<Condition>, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(c) = condition {
        cfg.condition = c;
    }
    if let Some(s) = seed {
        cfg.stream.seed = s;
    }
    if out.is_some() {
        cfg.paths.report_out = out;
    }
    let report = run_session(cfg)?;
    print_json(&report)?;
    Ok(if report.complete { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn cmd_compare(config: Option<PathBuf>, seed: Option<u64>, seeds: u64) -> Result<ExitCode> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let base = load_config(config.as_deref())?;
    let first = seed.unwrap_or(base.stream.seed);
    let mut runs: Vec<Comparison> = Vec::new();
    for s in first..first + seeds {
        let (cmp, _) = compare_conditions(&base.clone().with_seed(s))?;
        runs.push(cmp);
    }
    if runs.len() == 1 {
        print_json(&runs[0])?;
    } else {
        let summary = |pick: fn(&Comparison) -> &metaloop_core::runtime::ConditionSummary| {
            json!({
                "overall_accuracy": mean(runs.iter().map(|r| pick(r).overall_accuracy)),
                "completion_rate": mean(runs.iter().map(|r| pick(r).completion_rate)),
                "multi_rule_completion": mean(runs.iter().map(|r| pick(r).multi_rule_completion.unwrap_or(0.0))),
            })
        };
        print_json(&json!({
            "seeds": (first..first + seeds).collect::<Vec<_>>(),
            "baseline": summary(|r| &r.baseline),
            "skills_only": summary(|r| &r.skills_only),
            "full": summary(|r| &r.full),
            "runs": runs,
        }))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn load_events(path: &Path) -> Result<Vec<metaloop_core::runtime::Event>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_events(BufReader::new(file))?)
}

fn cmd_replay(events: PathBuf, assert_invariants: bool) -> Result<ExitCode> {
    let events = load_events(&events)?;
    match check_invariants(&events) {
        Ok(summary) => {
            print_json(&json!({"ok": true, "summary": summary}))?;
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            print_json(&json!({"ok": false, "violations": violations}))?;
            Ok(if assert_invariants { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
    }
}

fn cmd_report(input: PathBuf, format: Format) -> Result<ExitCode> {
    let scores = scores_from_events(&load_events(&input)?);
    match format {
        Format::Json => print_json(&aggregate(&scores)?)?,
        Format::Csv => write_scores_csv(&scores, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, condition, seed, out } => cmd_run(config, condition, seed, out),
        Cmd::Bench { command: BenchCmd::Compare { config, seed, seeds } } => cmd_compare(config, seed, seeds),
        Cmd::Replay { events, assert_invariants } => cmd_replay(events, assert_invariants),
        Cmd::Report { input, out } => cmd_report(input, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
