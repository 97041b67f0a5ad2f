use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use moco_core::checks::{gradient_check, nudft_adjoint_check, warp_adjoint_check};
use serde_json::json;

use crate::output::{ensure_dir, write_echo};

pub const NUDFT_TOLERANCE: f64 = 1e-10;
pub const WARP_TOLERANCE: f64 = 1e-12;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Args)]
pub struct AdjointCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the config echo.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Random directions per generator and data-term variant.
    #[arg(long, default_value_t = 10)]
    pub directions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn adjoint(args: &AdjointCheckArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    write_echo(&args.out, "adjointcheck", json!({ "instances": args.instances, "seed": args.seed }))?;
    let nudft = nudft_adjoint_check(args.instances, args.seed)?;
    let warp = warp_adjoint_check(args.instances, args.seed)?;
    println!("nudft_adjoint max_rel_error {:e} over {} instances", nudft.max_rel_error, nudft.instances);
    println!("warp_adjoint max_rel_error {:e} over {} instances", warp.max_rel_error, warp.instances);
    if !(nudft.max_rel_error < NUDFT_TOLERANCE) {
        bail!("nudft adjoint error {:e} exceeds {NUDFT_TOLERANCE:e}", nudft.max_rel_error);
    }
    if !(warp.max_rel_error < WARP_TOLERANCE) {
        bail!("warp adjoint error {:e} exceeds {WARP_TOLERANCE:e}", warp.max_rel_error);
    }
    Ok(())
}

pub fn gradient(args: &GradCheckArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    write_echo(&args.out, "gradcheck", json!({ "directions": args.directions, "seed": args.seed }))?;
    let report = gradient_check(args.directions, args.seed)?;
    println!(
        "gradient max_rel_error {:e} over {} directional derivatives",
        report.max_rel_error, report.instances
    );
    if !(report.max_rel_error < GRADIENT_TOLERANCE) {
        bail!("gradient error {:e} exceeds {GRADIENT_TOLERANCE:e}", report.max_rel_error);
    }
    Ok(())
}
