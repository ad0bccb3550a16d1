use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use lorvar::cli::{self, Command, Format};

/// Variance continuity experiments for Lorenz-like maps and flows.
#[derive(Debug, Parser)]
#[command(name = "lorvar", version)]
struct Args {
    /// ulam, map-variance, flow-variance, ode-returns, sweep, modulus, relation-check or report.
    #[arg(value_parser = parse_command)]
    command: Command,
    /// Line-oriented `section.key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.format` (csv or json).
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

fn parse_command(s: &str) -> Result<Command, String> {
    s.parse().map_err(|e: lorvar::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: lorvar::Error| e.to_string())
}

fn execute(args: Args) -> Result<lorvar::experiments::Verdict> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = cli::parse_config(&text).context("invalid configuration")?;
    cfg.apply_overrides(Some(args.command), args.seed, args.out, args.format).context("invalid configuration")?;
    let outcome = cli::run(&cfg).with_context(|| format!("{} failed", cfg.command))?;
    for line in &outcome.lines {
        println!("{line}");
    }
    println!("results in {}", cfg.out.display());
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(v) => ExitCode::from(v.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
