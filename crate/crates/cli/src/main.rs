mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use smokegrid_core::config::RunConfig;

/// Sparse-station PM2.5 smoke forecasting: synthetic worlds, ingestion,
/// training and evaluation.
///
/// Every command accepts `--config <file>` with `key = value` lines and any
/// number of `--key value` overrides; `smokegrid config` lists all keys.
#[derive(Parser)]
#[command(name = "smokegrid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic scenario and write it as an archive with dense truth.
    Synth(Tail),
    /// Grid observation CSVs (timestamp,lat,lon,variable,value) into an archive.
    Ingest(Tail),
    /// Train on an archive, writing the best checkpoint and a loss history.
    Train(Tail),
    /// Score a checkpoint seasonally against baselines; optionally export heatmaps.
    Eval(Tail),
    /// Compare analytic and finite-difference gradients of every operation.
    Gradcheck(Tail),
    /// Print the effective configuration with every key documented.
    Config(Tail),
}

#[derive(clap::Args)]
struct Tail {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides, then input files (ingest only).
    #[arg(allow_hyphen_values = true, num_args = 0.., trailing_var_arg = true, value_name = "ARGS")]
    rest: Vec<String>,
}

fn load(tail: &Tail) -> Result<(RunConfig, Vec<String>)> {
    let parsed = args::split_tail(&tail.rest).map_err(anyhow::Error::msg)?;
    let path = parsed.config.or_else(|| tail.config.clone());
    let text = match &path {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?),
        None => None,
    };
    let cfg = RunConfig::load(text.as_deref(), &parsed.overrides).with_context(|| match &path {
        Some(p) => format!("invalid configuration in {}", p.display()),
        None => "invalid configuration".to_string(),
    })?;
    if let Some(n) = cfg.thread_count()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    Ok((cfg, parsed.positional))
}

fn no_positional(positional: &[String]) -> Result<()> {
    match positional.first() {
        Some(p) => anyhow::bail!("unexpected argument `{p}`"),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Ingest(tail) => {
            let (cfg, files) = load(tail)?;
            commands::ingest(&cfg, &files)?;
        }
        Command::Synth(tail) | Command::Train(tail) | Command::Eval(tail) | Command::Config(tail) => {
            let (cfg, positional) = load(tail)?;
            no_positional(&positional)?;
            match cli.command {
                Command::Synth(_) => commands::synth(&cfg)?,
                Command::Train(_) => commands::train(&cfg)?,
                Command::Eval(_) => commands::eval(&cfg)?,
                _ => print!("{}", cfg.to_text()),
            }
        }
        Command::Gradcheck(tail) => {
            let (cfg, positional) = load(tail)?;
            no_positional(&positional)?;
            return commands::gradcheck(&cfg);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
