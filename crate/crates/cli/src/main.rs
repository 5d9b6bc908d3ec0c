//! `llpbench`: generate, verify and benchmark LLP datasets.

mod benchmark;
mod config;
mod generate;
mod output;
mod report;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "llpbench",
    version,
    about = "Variant-aware LLP dataset generation and benchmarking"
)]
struct Cli {
    /// Base seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every artifact and `manifest.json`.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one instance or a sweep over bag counts and regimes.
    Generate(generate::GenerateArgs),
    /// Test an instance's dependence structure against its recipe.
    Verify(verify::VerifyArgs),
    /// Run the repeated evaluation protocol on instances.
    Benchmark(benchmark::BenchmarkArgs),
    /// Render best-set tables from benchmark reports.
    Report(report::ReportArgs),
}

/// Outcome of a command that completed without an error.
pub enum Status {
    Ok,
    /// Verification disagreed with the recipe.
    Mismatch,
    /// Artifacts were written but some benchmark cells are invalid.
    Invalid,
}

fn run(cli: Cli) -> Result<Status> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Generate(args) => generate::run(args, cfg, &cli.out_dir),
        Command::Verify(args) => verify::run(args, cfg, &cli.out_dir),
        Command::Benchmark(args) => benchmark::run(args, cfg, &cli.out_dir),
        Command::Report(args) => report::run(args, cfg, &cli.out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Mismatch) => ExitCode::from(2),
        Ok(Status::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
