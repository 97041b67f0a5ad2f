use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;
use moco_core::engine::{ReconConfig, ReconState, Solver, Stage};
use moco_core::io::{Checkpoint, Container};
use moco_core::metrics::{compute_metrics, Estimate, Metrics};
use moco_core::phantom::GroundTruth;
use moco_core::Error;
use serde::{Deserialize, Serialize};

use crate::output::{csv_writer, ensure_dir, read_json, write_echo, write_json, write_magnitude_png, write_quiver_csv};

pub const CHECKPOINT_FILE: &str = "checkpoint.mcsk";
pub const SUMMARY_FILE: &str = "summary.json";

/// Reconstruction settings: a JSON file overridden by individual flags.
#[derive(Debug, Default, Args)]
pub struct ReconFlags {
    /// JSON file with reconstruction settings; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs_coarse: Option<usize>,
    #[arg(long)]
    pub epochs_fine: Option<usize>,
    #[arg(long)]
    pub batch_frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_f: Option<f64>,
    #[arg(long)]
    pub lr_theta: Option<f64>,
    #[arg(long)]
    pub lr_z: Option<f64>,
    #[arg(long)]
    pub coarse_fraction: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// conv_decoder or mlp.
    #[arg(long)]
    pub architecture: Option<String>,
    /// toeplitz or direct.
    #[arg(long)]
    pub data_term: Option<String>,
}

fn parse_name<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .with_context(|| format!("unknown {what} '{name}'"))
}

impl ReconFlags {
    pub fn resolve(&self) -> Result<ReconConfig> {
        let mut c: ReconConfig = match &self.config {
            Some(path) => read_json(path)?,
            None => ReconConfig::default(),
        };
        if let Some(v) = self.lambda {
            c.lambda_smooth = v;
        }
        if let Some(v) = self.epochs_coarse {
            c.epochs_coarse = v;
        }
        if let Some(v) = self.epochs_fine {
            c.epochs_fine = v;
        }
        if let Some(v) = self.batch_frames {
            c.batch_frames = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.lr_f {
            c.adam.lr_f = v;
        }
        if let Some(v) = self.lr_theta {
            c.adam.lr_theta = v;
        }
        if let Some(v) = self.lr_z {
            c.adam.lr_z = v;
        }
        if let Some(v) = self.coarse_fraction {
            c.coarse_fraction = v;
        }
        if let Some(v) = self.latent_dim {
            c.latent_dim = v;
        }
        if let Some(v) = &self.architecture {
            c.architecture = parse_name("architecture", v)?;
        }
        if let Some(v) = &self.data_term {
            c.data_term = parse_name("data term", v)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn any_set(&self) -> bool {
        self.config.is_some()
            || self.lambda.is_some()
            || self.epochs_coarse.is_some()
            || self.epochs_fine.is_some()
            || self.batch_frames.is_some()
            || self.seed.is_some()
            || self.lr_f.is_some()
            || self.lr_theta.is_some()
            || self.lr_z.is_some()
            || self.coarse_fraction.is_some()
            || self.latent_dim.is_some()
            || self.architecture.is_some()
            || self.data_term.is_some()
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Input container.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ReconFlags,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also save the checkpoint every this many epochs (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Frames for the two motion quiver files (default: latent extremes).
    #[arg(long, value_delimiter = ',')]
    pub quiver_frames: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub quiver_stride: usize,
    /// Log progress every this many epochs.
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
    /// Stop after this epoch and save a resumable checkpoint.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub runtime_seconds: f64,
    pub epochs: usize,
    pub final_loss: f64,
    pub config_hash: String,
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Coarse => "coarse",
        Stage::Fine => "fine",
    }
}

/// Runs the schedule to completion, appending each epoch's loss to
/// `loss.csv`. On a non-finite loss the last finite state is saved as
/// `diverged.mcsk` before the error is returned.
#[allow(clippy::too_many_arguments)]
fn solve(
    solver: &Solver,
    config: &ReconConfig,
    grid: usize,
    state: &mut ReconState,
    out: &Path,
    checkpoint_every: usize,
    log_every: usize,
    stop_after: usize,
) -> Result<()> {
    let mut log = csv_writer(&out.join("loss.csv"), &["epoch", "stage", "loss"])?;
    for (e, loss) in state.loss_history.iter().enumerate() {
        let stage = if e < config.epochs_coarse { Stage::Coarse } else { Stage::Fine };
        log.write_record(&[(e + 1).to_string(), stage_name(stage).into(), loss.to_string()])?;
    }
    log.flush()?;
    while state.epoch < solver.total_epochs().min(stop_after) {
        match solver.run_epoch(state) {
            Ok(loss) => {
                log.write_record(&[state.epoch.to_string(), stage_name(state.stage).into(), loss.to_string()])?;
                log.flush()?;
                if log_every > 0 && state.epoch.is_multiple_of(log_every) {
                    info!("epoch {}/{} loss {loss:.6e}", state.epoch, solver.total_epochs());
                }
                if checkpoint_every > 0 && state.epoch.is_multiple_of(checkpoint_every) {
                    save_checkpoint(&out.join(CHECKPOINT_FILE), config, grid, state)?;
                }
            }
            Err(e @ Error::Diverged(_)) => {
                let dump = out.join("diverged.mcsk");
                save_checkpoint(&dump, config, grid, state)?;
                return Err(e).with_context(|| format!("last finite state saved to {}", dump.display()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn save_checkpoint(path: &Path, config: &ReconConfig, grid: usize, state: &ReconState) -> Result<()> {
    let ck = Checkpoint {
        config: config.clone(),
        grid,
        state: state.clone(),
    };
    ck.save(path)?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<Container> {
    Container::load(path).with_context(|| format!("cannot load container {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn argext(values: &[f64], max: bool) -> usize {
    let cmp = |a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1);
    let it = values.iter().enumerate();
    let best = if max { it.max_by(cmp) } else { it.min_by(cmp) };
    best.map(|(i, _)| i).unwrap_or(0)
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let container = load_container(&args.data)?;
    let dataset = &container.dataset;
    let (config, resumed) = match &args.resume {
        Some(path) => {
            if args.flags.any_set() {
                bail!("--resume uses the checkpoint's configuration; drop the configuration flags");
            }
            let ck = load_checkpoint(path)?;
            if ck.grid != dataset.rows {
                bail!("checkpoint grid {} does not match the data grid {}", ck.grid, dataset.rows);
            }
            (ck.config, Some(ck.state))
        }
        None => (args.flags.resolve()?, None),
    };
    let solver = Solver::new(dataset, config.clone())?;
    let mut state = match resumed {
        Some(s) => s,
        None => solver.initial_state()?,
    };

    if let Some(f) = &args.quiver_frames {
        let m = dataset.num_frames();
        if f.len() != 2 || f.iter().any(|&t| t >= m) {
            bail!("--quiver-frames takes two frames below {m}, got {f:?}");
        }
    }
    ensure_dir(&args.out)?;
    write_echo(
        &args.out,
        "reconstruct",
        serde_json::json!({
            "data": args.data,
            "resume": args.resume,
            "config": config,
            "config_hash": config.hash(),
            "seed": config.seed,
            "checkpoint_every": args.checkpoint_every,
            "quiver_frames": args.quiver_frames,
            "quiver_stride": args.quiver_stride,
            "stop_after": args.stop_after,
        }),
    )?;

    let start = Instant::now();
    let stop = args.stop_after.unwrap_or(usize::MAX);
    solve(&solver, &config, dataset.rows, &mut state, &args.out, args.checkpoint_every, args.log_every, stop)?;
    let runtime = start.elapsed().as_secs_f64();
    if state.epoch < solver.total_epochs() {
        save_checkpoint(&args.out.join(CHECKPOINT_FILE), &config, dataset.rows, &state)?;
        info!("stopped at epoch {}; resume with --resume", state.epoch);
        return Ok(());
    }
    let final_loss = solver.final_loss(&state)?;
    info!("finished {} epochs in {runtime:.1} s, loss {final_loss:.6e}", state.epoch);

    save_checkpoint(&args.out.join(CHECKPOINT_FILE), &config, dataset.rows, &state)?;
    write_json(
        &args.out.join(SUMMARY_FILE),
        &Summary {
            runtime_seconds: runtime,
            epochs: state.epoch,
            final_loss,
            config_hash: config.hash(),
        },
    )?;
    write_state_previews(&state, &args.out, args.quiver_frames.as_deref(), args.quiver_stride)
}

fn write_state_previews(state: &ReconState, out: &Path, frames: Option<&[usize]>, stride: usize) -> Result<()> {
    write_magnitude_png(&out.join("template.png"), &state.f)?;
    let dim = state.z.dim();
    let mut header = vec!["frame".to_string()];
    header.extend((0..dim).map(|i| format!("z{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = csv_writer(&out.join("latents.csv"), &header)?;
    for t in 0..state.z.frames() {
        let mut row = vec![t.to_string()];
        row.extend(state.z.row(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let m = state.z.frames();
    let frames = match frames {
        Some(f) => f.to_vec(),
        None => {
            let trace = state.z.trace(0);
            vec![argext(&trace, false), argext(&trace, true)]
        }
    };
    for &t in &frames {
        if t >= m {
            bail!("quiver frame {t} is out of range (frames: {m})");
        }
        let phi = state.motion_at(t, state.f.dims())?;
        write_quiver_csv(&out.join(format!("motion_frame_{t}.csv")), &phi, stride)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Container with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    /// Summary holding the runtime (default: next to the checkpoint).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Output directory for metrics.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn require_truth(container: &Container) -> Result<&GroundTruth> {
    container
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("container has no ground-truth sections".into()).into())
}

fn state_metrics(state: &ReconState, truth: &GroundTruth, runtime: f64) -> Result<Metrics> {
    if state.stage != Stage::Fine {
        bail!("checkpoint is still in the coarse stage (epoch {})", state.epoch);
    }
    Ok(compute_metrics(&Estimate::from_state(state)?, truth, runtime)?)
}

fn write_metrics(path: &Path, m: &Metrics) -> Result<()> {
    std::fs::write(path, format!("{}\n{}\n", Metrics::CSV_HEADER, m.csv_row()))
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let container = load_container(&args.data)?;
    let truth = require_truth(&container)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let summary_path = match &args.summary {
        Some(p) => p.clone(),
        None => args
            .checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(SUMMARY_FILE),
    };
    let summary: Summary = read_json(&summary_path)?;
    let m = state_metrics(&ck.state, truth, summary.runtime_seconds)?;
    ensure_dir(&args.out)?;
    write_echo(
        &args.out,
        "metrics",
        serde_json::json!({
            "checkpoint": args.checkpoint,
            "data": args.data,
            "summary": summary_path,
            "seed": ck.config.seed,
        }),
    )?;
    write_metrics(&args.out.join("metrics.csv"), &m)?;
    println!("{}", Metrics::CSV_HEADER);
    println!("{}", m.csv_row());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Container with ground truth.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ReconFlags,
    /// Explicit values; otherwise a logarithmic grid from --min to --max.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-2)]
    pub min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub max: f64,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
}

fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && count >= 1) {
        bail!("lambda grid needs 0 < min <= max and count >= 1");
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (a, b) = (min.log10(), max.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

pub fn sweep_lambda(args: &SweepArgs) -> Result<()> {
    let container = load_container(&args.data)?;
    let truth = require_truth(&container)?;
    let base = args.flags.resolve()?;
    let lambdas = match &args.lambdas {
        Some(l) => l.clone(),
        None => log_grid(args.min, args.max, args.count)?,
    };
    ensure_dir(&args.out)?;
    write_echo(
        &args.out,
        "sweep-lambda",
        serde_json::json!({
            "data": args.data,
            "config": base,
            "seed": base.seed,
            "lambdas": lambdas,
        }),
    )?;
    let mut w = csv_writer(
        &args.out.join("sweep.csv"),
        &["lambda", "latent_corr", "motion_epe", "psnr_template", "period_error", "final_loss", "runtime"],
    )?;
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &lambdas {
        let config = ReconConfig {
            lambda_smooth: lambda,
            ..base.clone()
        };
        let solver = Solver::new(&container.dataset, config)?;
        let mut state = solver.initial_state()?;
        let start = Instant::now();
        solver.run(&mut state, |_| {})?;
        let runtime = start.elapsed().as_secs_f64();
        let m = state_metrics(&state, truth, runtime)?;
        let loss = solver.final_loss(&state)?;
        w.write_record(&[
            lambda.to_string(),
            m.latent_corr.to_string(),
            m.motion_epe.to_string(),
            m.psnr_template.to_string(),
            m.period_error.to_string(),
            loss.to_string(),
            runtime.to_string(),
        ])?;
        w.flush()?;
        println!("lambda {lambda:.4e} latent_corr {:.4}", m.latent_corr);
        if best.is_none_or(|(_, c)| m.latent_corr.abs() > c) {
            best = Some((lambda, m.latent_corr.abs()));
        }
    }
    if let Some((lambda, corr)) = best {
        println!("best lambda {lambda:.4e} latent_corr {corr:.4}");
    }
    Ok(())
}
