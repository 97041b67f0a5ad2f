use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use log::info;
use moco_core::baseline::{run_baseline, BaselineConfig};
use moco_core::metrics::{best_phase_psnr, pearson};
use serde_json::json;

use crate::recon::load_container;
use crate::output::{csv_writer, ensure_dir, read_json, write_echo, write_json, write_magnitude_png};

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with baseline settings; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub phases: Option<usize>,
    #[arg(long)]
    pub tv_weight: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

pub fn run(args: &BaselineArgs) -> Result<()> {
    let mut config: BaselineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => BaselineConfig::default(),
    };
    if let Some(v) = args.phases {
        config.num_phases = v;
    }
    if let Some(v) = args.tv_weight {
        config.tv_weight = v;
    }
    if let Some(v) = args.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = args.tolerance {
        config.tolerance = v;
    }
    config.validate()?;
    let container = load_container(&args.data)?;
    ensure_dir(&args.out)?;
    write_echo(&args.out, "baseline", json!({ "data": args.data, "config": config }))?;

    let start = Instant::now();
    let (gating, bins) = run_baseline(&container.dataset, &config)?;
    let runtime = start.elapsed().as_secs_f64();
    info!("baseline finished in {runtime:.1} s");

    let spf = container.dataset.spokes_per_frame;
    let mut phase_of = vec![0usize; gating.values.len()];
    for bin in &bins {
        for &s in &bin.spoke_indices {
            phase_of[s] = bin.phase_index;
        }
    }
    let mut w = csv_writer(&args.out.join("gating.csv"), &["spoke_index", "frame_index", "value", "phase"])?;
    for (s, v) in gating.values.iter().enumerate() {
        w.write_record(&[s.to_string(), (s / spf).to_string(), v.to_string(), phase_of[s].to_string()])?;
    }
    w.flush()?;

    let images: Vec<_> = bins.iter().filter_map(|b| b.recon.clone()).collect();
    for (bin, img) in bins.iter().zip(&images) {
        write_magnitude_png(&args.out.join(format!("phase_{}.png", bin.phase_index)), img)?;
    }
    let (psnr, gating_corr) = match &container.truth {
        Some(truth) => {
            let per_spoke: Vec<f64> = (0..gating.values.len())
                .map(|s| truth.respiratory_signal[s / spf])
                .collect();
            (Some(best_phase_psnr(&images, truth)?), Some(pearson(&gating.values, &per_spoke)))
        }
        None => (None, None),
    };
    let sizes: Vec<usize> = bins.iter().map(|b| b.spoke_indices.len()).collect();
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "runtime_seconds": runtime,
            "filter_cutoff": gating.filter_cutoff,
            "phase_sizes": sizes,
            "best_phase_psnr": psnr,
            "gating_correlation": gating_corr,
        }),
    )?;
    if let Some(p) = psnr {
        println!("best_phase_psnr {p:.3}");
    }
    Ok(())
}
