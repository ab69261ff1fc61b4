//! Experiment runner for the `turndelay` library.
//!
//! Every subcommand writes its files and a `summary.json` into the output
//! directory. Failures are recorded there too, with a stable error code.

pub mod commands;
pub mod config;
pub mod error;
pub mod summary;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Which;
use crate::config::Config;
use crate::error::CliError;
use crate::summary::RunSummary;

#[derive(Debug, Parser)]
#[command(
    name = "turndelay",
    version,
    about = "Run-and-tumble exit experiments with turning delays"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=config::MAX_SEED))]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for replicate-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Agent Monte Carlo: run records, mass curve, exit histogram.
    Simulate,
    /// One grid solver.
    Solve {
        #[arg(long, value_enum)]
        which: Which,
    },
    /// KS metrics and exit-time differences between earlier outputs.
    Compare {
        /// Summary files or the directories holding them.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// All backward solvers and their gaps.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Solve { .. } => "solve",
            Command::Compare { .. } => "compare",
            Command::Report => "report",
        }
    }
}

pub struct Outcome {
    pub summary: RunSummary,
    pub out_dir: PathBuf,
    pub error: Option<CliError>,
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &Config, out: &std::path::Path, summary: &mut RunSummary) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate => commands::simulate(cfg, out, summary),
        Command::Solve { which } => commands::solve(cfg, *which, out, summary),
        Command::Compare { paths } => commands::compare(paths, out, summary),
        Command::Report => commands::report(cfg, out, summary),
    }
}

/// Runs one subcommand and writes its summary, successful or not.
pub fn execute(cli: &Cli) -> Outcome {
    let name = cli.command.name();
    let loaded = load_config(cli);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| loaded.as_ref().ok().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut summary = RunSummary::new(name);
    let result = loaded.and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli, &cfg, &out_dir, &mut summary))
    });
    let error = result.err();
    if let Some(e) = &error {
        summary = RunSummary {
            timings_s: std::mem::take(&mut summary.timings_s),
            config_digest: summary.config_digest.take(),
            seed: summary.seed,
            ..RunSummary::failed(name, e)
        };
    }
    if let Err(e) = summary.write(&out_dir) {
        return Outcome {
            summary,
            out_dir,
            error: Some(error.unwrap_or(e)),
        };
    }
    Outcome {
        summary,
        out_dir,
        error,
    }
}

/// Best-effort output directory from raw arguments, for usage errors.
pub fn out_dir_from_args(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| {
        if let Some(v) = a.strip_prefix("--out=") {
            Some(PathBuf::from(v))
        } else if a == "--out" {
            args.get(i + 1).map(PathBuf::from)
        } else {
            None
        }
    })
}
