#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! `moco`: simulate, reconstruct, evaluate.
//!
//! Errors are reported on stderr as a single line
//! `error kind=<kind> message=<json string>` with a nonzero exit code.
//! `MOCO_THREADS` sets the worker thread count (default: all cores).

mod baseline;
mod checks;
mod output;
mod recon;
mod simulate;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub const THREADS_ENV: &str = "MOCO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "moco", version, about = "Motion-compensated reconstruction of free-breathing radial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a breathing phantom acquisition and write a container.
    Simulate(simulate::SimulateArgs),
    /// Jointly estimate template, motion generator and latents.
    Reconstruct(recon::ReconstructArgs),
    /// Self-gated, binned reconstruction of a few respiratory phases.
    Baseline(baseline::BaselineArgs),
    /// Finite-difference check of the loss gradient.
    Gradcheck(checks::GradCheckArgs),
    /// Dot-product checks of the NUDFT and warp adjoints.
    Adjointcheck(checks::AdjointCheckArgs),
    /// Compare a checkpoint with a container's ground truth.
    Metrics(recon::MetricsArgs),
    /// Latent correlation over a grid of smoothness weights.
    SweepLambda(recon::SweepArgs),
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got '{value}'"))?;
    if threads == 0 {
        bail!("{THREADS_ENV} must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<moco_core::Error>() {
            return match e {
                moco_core::Error::InvalidInput(_) => "invalid_input",
                moco_core::Error::DimensionMismatch(_) => "dimension_mismatch",
                moco_core::Error::NonFinite(_) => "non_finite",
                moco_core::Error::Diverged(_) => "diverged",
                moco_core::Error::Format(_) => "format",
                moco_core::Error::Io(_) => "io",
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "config";
        }
    }
    "error"
}

fn report(kind: &str, message: &str) {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={kind} message={}", serde_json::Value::String(one_line));
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Reconstruct(a) => recon::reconstruct(a),
        Command::Baseline(a) => baseline::run(a),
        Command::Gradcheck(a) => checks::gradient(a),
        Command::Adjointcheck(a) => checks::adjoint(a),
        Command::Metrics(a) => recon::metrics(a),
        Command::SweepLambda(a) => recon::sweep_lambda(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Wrapped errors often repeat their source's text.
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !parts.last().is_some_and(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            report(error_kind(&e), &parts.join(": "));
            ExitCode::FAILURE
        }
    }
}
