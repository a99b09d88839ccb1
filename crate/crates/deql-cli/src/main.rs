//! `deql`: train, evaluate, and cross-check linear item-item recommenders
//! built from dropout-weighted least squares.

mod bench;
mod config;
mod grid;
mod pipeline;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "deql",
    version,
    about = "Linear autoencoder recommenders with dropout-weighted closed-form solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Canonicalize a raw interaction file and emit id tables.
    Ingest(pipeline::IngestArgs),
    /// Partition interactions into train / test-input / test-target.
    Split(pipeline::SplitArgs),
    /// Fit a weight matrix and persist it with its training record.
    Train(pipeline::TrainArgs),
    /// Score a trained model against held-out interactions.
    Evaluate(pipeline::EvaluateArgs),
    /// Grid-search hyperparameters on a validation split and refit the best.
    Grid(grid::GridArgs),
    /// Run the deterministic property battery on a synthetic instance.
    Verify(verify::VerifyArgs),
    /// Time the direct route against the shared-factorization route.
    Bench(bench::BenchArgs),
}

/// `DEQL_THREADS` caps the global worker pool before any parallel work runs.
fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var("DEQL_THREADS") {
        let threads: usize = value
            .trim()
            .parse()
            .with_context(|| format!("DEQL_THREADS must be a positive integer, got `{value}`"))?;
        anyhow::ensure!(threads >= 1, "DEQL_THREADS must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing the global thread pool")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    init_threads()?;
    match &cli.command {
        Command::Ingest(args) => pipeline::cmd_ingest(args),
        Command::Split(args) => pipeline::cmd_split(args),
        Command::Train(args) => pipeline::cmd_train(args),
        Command::Evaluate(args) => pipeline::cmd_evaluate(args),
        Command::Grid(args) => grid::cmd_grid(args),
        Command::Verify(args) => verify::cmd_verify(args),
        Command::Bench(args) => bench::cmd_bench(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
