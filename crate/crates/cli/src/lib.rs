//! Batch driver: reads feeds, detects episodes, measures latency and writes
//! the summary report. Every stage is also callable as a library function.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod inputs;
pub mod report;
pub mod table;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "probelag",
    version,
    about = "Measure the reporting latency of probe speed feeds"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Shift search range, e.g. `-5:20`.
    #[arg(
        long,
        global = true,
        value_name = "K_MIN:K_MAX",
        allow_hyphen_values = true
    )]
    pub bounds: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub smooth_window: Option<usize>,
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    /// Any other config key, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Detect slowdown-and-recovery episodes in the reference data.
    Detect,
    /// Measure probe latency for previously detected episodes.
    Measure,
    /// Summarize a latency CSV into tables and distributions.
    Report,
    /// Write a synthetic corpus with planted latency.
    Synth,
    /// Detect, measure and report in one run.
    Pipeline,
}

/// Config file first, then `--set` pairs, then the dedicated flags.
pub fn resolve_config(args: &Args) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cwd = std::path::Path::new("");
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{pair}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v, cwd)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(b) = &args.bounds {
        cfg.set("bounds", b, cwd)?;
    }
    if let Some(w) = args.smooth_window {
        cfg.smooth_window = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one subcommand and returns a short human-readable summary.
pub fn run(args: &Args) -> CliResult<String> {
    let cfg = resolve_config(args)?;
    Ok(match args.command {
        Command::Detect => {
            let out = commands::detect(&cfg)?;
            format!(
                "{} episodes on {} reference days, {} diagnostics",
                out.episodes.len(),
                out.days.len(),
                out.diagnostics.len()
            )
        }
        Command::Measure => {
            let out = commands::measure(&cfg)?;
            format!(
                "{} latency results, {} skipped",
                out.results.len(),
                out.diagnostics.len()
            )
        }
        Command::Report => {
            let r = report::report(&cfg)?;
            format!("report over {} latency results", r.results)
        }
        Command::Synth => {
            let c = commands::synth(&cfg)?;
            format!(
                "{} reference days, {} probe feeds, {} planted episodes",
                c.reference.len(),
                c.probes.len(),
                c.planted.len()
            )
        }
        Command::Pipeline => {
            let out = commands::pipeline(&cfg)?;
            format!(
                "{} episodes, {} latency results, {} skipped",
                out.detect.episodes.len(),
                out.measure.results.len(),
                out.measure.diagnostics.len()
            )
        }
    })
}
