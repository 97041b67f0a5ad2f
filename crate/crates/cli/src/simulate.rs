use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use log::info;
use moco_core::io::Container;
use moco_core::nudft::Ordering;
use moco_core::phantom::PhantomSpec;
use moco_core::simulation::{benchmark_spec, simulate, BENCHMARK_SNR_DB};

use crate::output::{csv_writer, ensure_dir, write_echo, write_magnitude_png, write_motion_png};

pub const DATA_FILE: &str = "data.mcsd";

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// 64², 40 frames of 12 spokes, 4 coils, 4 px breathing, period 10.
    Desk,
    /// 32², 8 frames of 8 spokes, 2 coils. For smoke tests.
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OrderingArg {
    GoldenAngle,
    BitReversed,
    Uniform,
}

impl From<OrderingArg> for Ordering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::GoldenAngle => Ordering::GoldenAngle,
            OrderingArg::BitReversed => Ordering::BitReversed,
            OrderingArg::Uniform => Ordering::Uniform,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "golden-angle")]
    pub ordering: OrderingArg,
    /// Target SNR in dB; `inf` gives noiseless data.
    #[arg(long, default_value_t = BENCHMARK_SNR_DB)]
    pub snr_db: f64,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub spokes_per_frame: Option<usize>,
    #[arg(long)]
    pub samples_per_spoke: Option<usize>,
    #[arg(long)]
    pub coils: Option<usize>,
    /// Breathing period in frames.
    #[arg(long)]
    pub period: Option<f64>,
    /// Breathing amplitude in pixels.
    #[arg(long)]
    pub amplitude: Option<f64>,
}

fn preset_spec(preset: Preset, seed: u64) -> PhantomSpec {
    match preset {
        Preset::Desk => benchmark_spec(seed),
        Preset::Tiny => PhantomSpec {
            grid_size: 32,
            num_frames: 8,
            spokes_per_frame: 8,
            samples_per_spoke: 32,
            num_coils: 2,
            breathing_period: 4.0,
            breathing_amplitude: 2.0,
            noise_sigma: 0.0,
            seed,
        },
    }
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let mut spec = preset_spec(args.preset, args.seed);
    let overrides = [
        (&mut spec.grid_size, args.grid),
        (&mut spec.num_frames, args.frames),
        (&mut spec.spokes_per_frame, args.spokes_per_frame),
        (&mut spec.samples_per_spoke, args.samples_per_spoke),
        (&mut spec.num_coils, args.coils),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if let Some(p) = args.period {
        spec.breathing_period = p;
    }
    if let Some(a) = args.amplitude {
        spec.breathing_amplitude = a;
    }
    let snr = if args.snr_db.is_infinite() && args.snr_db > 0.0 {
        None
    } else if args.snr_db.is_finite() {
        Some(args.snr_db)
    } else {
        bail!("snr_db must be finite or inf, got {}", args.snr_db);
    };
    let ordering: Ordering = args.ordering.into();
    let sim = simulate(&spec, ordering, snr)?;
    info!("simulated {} frames, noise sigma {:.4e}", spec.num_frames, sim.spec.noise_sigma);

    ensure_dir(&args.out)?;
    write_echo(
        &args.out,
        "simulate",
        serde_json::json!({
            "preset": format!("{:?}", args.preset).to_lowercase(),
            "ordering": ordering,
            "snr_db": snr,
            "spec": sim.spec,
        }),
    )?;
    let container = Container {
        dataset: sim.dataset,
        truth: Some(sim.truth),
    };
    container.save(&args.out.join(DATA_FILE))?;
    let truth = container.truth.as_ref().expect("just set");
    write_magnitude_png(&args.out.join("template.png"), &truth.template)?;
    let peak = truth
        .respiratory_signal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(t, _)| t)
        .unwrap_or(0);
    write_motion_png(&args.out.join("motion_peak.png"), &truth.motion[peak])?;
    let mut w = csv_writer(&args.out.join("respiratory.csv"), &["frame_index", "r_t"])?;
    for (t, r) in truth.respiratory_signal.iter().enumerate() {
        w.write_record(&[t.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
