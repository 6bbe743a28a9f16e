//! Experiment harness for the self-similar blow-up laboratory.
//!
//! One binary, seven subcommands: exact-family verification, blow-up
//! tracking, coefficient atlases, linear mixed solves, smoothing-axiom
//! sweeps, the Newton-type iteration trace, and the nonlinear stability
//! experiment. Every run is driven by one TOML config file plus a seed,
//! writes CSV (and SVG) artifacts into its output directory, and leaves
//! a manifest with the resolved config and the hash of every artifact.
//! Identical config and seed give byte-identical outputs.

pub mod config;
pub mod csvio;
pub mod experiments;
pub mod manifest;
pub mod svg;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "bicone", about = "self-similar blow-up laboratory experiments", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for all randomness (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-case parallel runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Residuals, classification and steady-profile checks of the
    /// explicit family.
    VerifyExact,
    /// Nonlinear evolution from exact data: blow-up rate tracking and
    /// self-convergence.
    Blowup,
    /// Linearized coefficient atlas and degenerate-curve location.
    Coeffs,
    /// Manufactured-solution suite for the space-time mixed solver.
    Linsolve,
    /// Smoothing-operator norm-axiom sweep.
    Smooth,
    /// Newton-type iteration with quadratic-decay trace.
    Nash,
    /// Nonlinear stability of the self-similar profile on the shrinking
    /// cone.
    Stability,
}

/// Execute a parsed invocation; returns the process exit code
/// (0 = every acceptance check of the subcommand passed).
pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = config::Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;
    let ctx = experiments::Ctx { cfg: &cfg, out: cli.out.clone(), jobs: cli.jobs.max(1) };
    let pass = match cli.command {
        Command::VerifyExact => experiments::verify::run(&ctx)?,
        Command::Blowup => experiments::blowup::run(&ctx)?,
        Command::Coeffs => experiments::coeffs::run(&ctx)?,
        Command::Linsolve => experiments::linsolve::run(&ctx)?,
        Command::Smooth => experiments::smooth::run(&ctx)?,
        Command::Nash => experiments::nash::run(&ctx)?,
        Command::Stability => experiments::stability::run(&ctx)?,
    };
    Ok(if pass { 0 } else { 1 })
}
