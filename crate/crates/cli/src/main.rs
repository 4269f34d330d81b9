// SPDX-License-Identifier: Apache-2.0

//! `freb`: generate benchmark splits, calibrate, build confidence sets and
//! check their local coverage.

mod benchmark;
mod calibrate;
mod common;
mod config;
mod diagnose;
mod exit;
mod infer;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "freb", version, about = "Frequentist calibration of posterior-based confidence sets")]
struct Cli {
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, created if missing (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON object supplying defaults for any long flag, keyed by flag name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw train, calibration, diagnostic and target splits for a study.
    Benchmark(benchmark::BenchmarkArgs),
    /// Fit rejection-probability and/or critical-value models.
    Calibrate(calibrate::CalibrateArgs),
    /// Build one confidence set per target observation.
    Infer(infer::InferArgs),
    /// Estimate local coverage on a diagnostic split and report flagged regions.
    Diagnose(diagnose::DiagnoseArgs),
}

/// Global settings after merging the config file.
pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
    pub config: ConfigFile,
}

fn globals(cli: &Cli) -> anyhow::Result<Globals> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let known = [
        benchmark::KEYS,
        calibrate::KEYS,
        infer::KEYS,
        diagnose::KEYS,
        &["seed", "out"],
    ]
    .concat();
    if let Some(k) = config.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(exit::usage(format!("config: unknown key {k:?}")));
    }
    let seed = match cli.seed {
        Some(s) => s,
        None => match config.get("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| exit::usage("config: seed must be a non-negative integer"))?,
            None => 0,
        },
    };
    let out = match &cli.out {
        Some(p) => p.clone(),
        None => match config.get("out") {
            Some(v) => PathBuf::from(v.as_str().ok_or_else(|| exit::usage("config: out must be a string"))?),
            None => PathBuf::from("."),
        },
    };
    std::fs::create_dir_all(&out).map_err(|e| anyhow::anyhow!("creating {}: {e}", out.display()))?;
    Ok(Globals { seed, out, config })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = globals(&cli)?;
    match &cli.command {
        Command::Benchmark(a) => benchmark::run(&g, a),
        Command::Calibrate(a) => calibrate::run(&g, a),
        Command::Infer(a) => infer::run(&g, a),
        Command::Diagnose(a) => diagnose::run(&g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e) as u8)
        }
    }
}
