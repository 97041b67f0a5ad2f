//! Joint estimation of the template `f`, generator parameters `θ` and
//! latent trajectory `Z` from multicoil radial k-t data.
//!
//! Per frame the model is `f_t = D(f, U(G_θ(z_t)))` where `U` upsamples
//! the coarse generator output to the image grid and `D` is the bilinear
//! warp. The cost is
//!
//! ```text
//! C = Σ_t ‖A_t f_t − b_t‖² + λ Σ_t ‖z_{t+1} − z_t‖²
//! ```
//!
//! minimised with Adam over mini-batches of frames; the smoothness term is
//! always evaluated over the whole trajectory and scaled by `batch/M`.
//! Gradients are obtained by chaining the exact adjoints of every operator.

use log::warn;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, mismatch, Error, Result};
use crate::generator::{
    generator_backward_traced, generator_forward, generator_forward_traced, init_params,
    Activation, Architecture, GeneratorConfig, GeneratorParams, LatentTrajectory,
};
use crate::image::{CMatrix, ComplexImage, MotionField};
use crate::nudft::{KPoint, NudftOperator, SpokeFrame, ToeplitzNormal};
use crate::warp::{
    upsample_motion, upsample_motion_adjoint, warp_adjoint_image, warp_forward, warp_grad_motion,
};

/// Motion grid is the image grid divided by this factor.
pub const MOTION_GRID_DIVISOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr_f: f64,
    pub lr_theta: f64,
    pub lr_z: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_f: 1e-1,
            lr_theta: 1e-3,
            lr_z: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How the data term and its image gradient are evaluated. Both are exact;
/// `Toeplitz` applies `AᴴA` through FFT convolution, `Direct` evaluates the
/// NUDFT and its adjoint sample by sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataTerm {
    Toeplitz,
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub lambda_smooth: f64,
    pub adam: AdamConfig,
    pub epochs_coarse: usize,
    pub epochs_fine: usize,
    /// Fraction of the half-resolution band (`|k| ≤ 0.25`) kept in the
    /// coarse stage.
    pub coarse_fraction: f64,
    pub batch_frames: usize,
    pub seed: u64,
    pub latent_dim: usize,
    pub architecture: Architecture,
    pub activation: Activation,
    pub init_scale: f64,
    pub data_term: DataTerm,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 1.0,
            adam: AdamConfig::default(),
            epochs_coarse: 100,
            epochs_fine: 300,
            coarse_fraction: 1.0,
            batch_frames: 40,
            seed: 0,
            latent_dim: 1,
            architecture: Architecture::ConvDecoder,
            activation: Activation::Tanh,
            init_scale: 1.0,
            data_term: DataTerm::Toeplitz,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr_f > 0.0 && a.lr_theta > 0.0 && a.lr_z > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0 && a.beta2 > 0.0 && a.beta2 < 1.0) {
            return Err(invalid("Adam betas must lie in (0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(invalid("Adam eps must be positive"));
        }
        if self.epochs_fine == 0 {
            return Err(invalid("epochs_fine must be >= 1"));
        }
        if !(self.coarse_fraction > 0.0 && self.coarse_fraction <= 1.0) {
            return Err(invalid("coarse_fraction must lie in (0, 1]"));
        }
        if self.batch_frames == 0 {
            return Err(invalid("batch_frames must be >= 1"));
        }
        if !(self.lambda_smooth >= 0.0) {
            return Err(invalid("lambda_smooth must be >= 0"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent_dim must be >= 1"));
        }
        if !(self.init_scale > 0.0) {
            return Err(invalid("init_scale must be positive"));
        }
        Ok(())
    }

    pub fn generator_config(&self, image_grid: usize) -> GeneratorConfig {
        GeneratorConfig {
            architecture: self.architecture,
            activation: self.activation,
            latent_dim: self.latent_dim,
            grid: image_grid / MOTION_GRID_DIVISOR,
        }
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Measured data plus the (known) coil sensitivities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub spokes_per_frame: usize,
    pub samples_per_spoke: usize,
    pub coil_maps: Vec<ComplexImage>,
    pub frames: Vec<SpokeFrame>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(invalid("dataset has no frames"));
        }
        if self.coil_maps.is_empty() {
            return Err(invalid("dataset has no coil maps"));
        }
        if let Some(m) = self.coil_maps.iter().find(|m| m.dims() != (self.rows, self.cols)) {
            return Err(mismatch(format!(
                "coil map is {}x{}, dataset grid is {}x{}",
                m.rows(),
                m.cols(),
                self.rows,
                self.cols
            )));
        }
        let per_frame = self.spokes_per_frame * self.samples_per_spoke;
        for frame in &self.frames {
            frame.validate()?;
            if frame.coords.len() != per_frame {
                return Err(mismatch(format!(
                    "frame {} has {} samples, expected {} spokes of {}",
                    frame.frame_index,
                    frame.coords.len(),
                    self.spokes_per_frame,
                    self.samples_per_spoke
                )));
            }
            if frame.samples.rows() != self.coil_maps.len() {
                return Err(mismatch(format!(
                    "frame {} has {} coil rows, dataset has {} coil maps",
                    frame.frame_index,
                    frame.samples.rows(),
                    self.coil_maps.len()
                )));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn total_spokes(&self) -> usize {
        self.frames.len() * self.spokes_per_frame
    }
}

/// Per-frame quantities that stay fixed during optimisation.
struct PreparedFrame {
    coords: Vec<KPoint>,
    samples: CMatrix,
    normal: Option<ToeplitzNormal>,
    direct: Option<NudftOperator>,
    adjoint_b: ComplexImage,
    b_norm2: f64,
}

/// A dataset prepared for optimisation at one resolution.
pub struct Problem {
    rows: usize,
    cols: usize,
    coil_maps: Vec<ComplexImage>,
    frames: Vec<PreparedFrame>,
    mode: DataTerm,
}

impl Problem {
    /// Full-resolution problem.
    pub fn full(dataset: &Dataset, mode: DataTerm) -> Result<Self> {
        dataset.validate()?;
        Self::build(
            dataset.rows,
            dataset.cols,
            dataset.coil_maps.clone(),
            dataset
                .frames
                .iter()
                .map(|f| (f.coords.clone(), f.samples.clone()))
                .collect(),
            mode,
        )
    }

    /// Half-resolution problem: keeps samples with `|k| ≤ 0.25·fraction`,
    /// rescales their coordinates by 2 and subsamples the coil maps. The
    /// data are divided by 4 so the half-size image stays in the intensity
    /// units of the full-size one.
    pub fn coarse(dataset: &Dataset, fraction: f64, mode: DataTerm) -> Result<Self> {
        dataset.validate()?;
        if !dataset.rows.is_multiple_of(2) || !dataset.cols.is_multiple_of(2) {
            return Err(invalid("coarse stage needs an even grid"));
        }
        let cutoff = 0.25 * fraction;
        let mut frames = Vec::with_capacity(dataset.frames.len());
        for frame in &dataset.frames {
            let keep: Vec<usize> = frame
                .coords
                .iter()
                .enumerate()
                .filter(|(_, k)| k[0].hypot(k[1]) <= cutoff)
                .map(|(i, _)| i)
                .collect();
            if keep.is_empty() {
                return Err(invalid(format!(
                    "frame {} has no samples inside the coarse band",
                    frame.frame_index
                )));
            }
            let coords = keep
                .iter()
                .map(|&i| [2.0 * frame.coords[i][0], 2.0 * frame.coords[i][1]])
                .collect();
            let mut samples = frame.samples.select_columns(&keep);
            samples.data_mut().iter_mut().for_each(|v| *v *= 0.25);
            frames.push((coords, samples));
        }
        let maps = dataset.coil_maps.iter().map(|m| m.subsample(2)).collect();
        Self::build(dataset.rows / 2, dataset.cols / 2, maps, frames, mode)
    }

    fn build(
        rows: usize,
        cols: usize,
        coil_maps: Vec<ComplexImage>,
        frames: Vec<(Vec<KPoint>, CMatrix)>,
        mode: DataTerm,
    ) -> Result<Self> {
        let frames = frames
            .into_par_iter()
            .map(|(coords, samples)| {
                let op = NudftOperator::new(rows, cols, &coords);
                let adjoint_b = op.adjoint(&samples, &coil_maps)?;
                let (normal, direct) = match mode {
                    DataTerm::Toeplitz => (Some(ToeplitzNormal::new(rows, cols, &coords, None)), None),
                    DataTerm::Direct => (None, Some(op)),
                };
                Ok(PreparedFrame {
                    b_norm2: samples.norm_sqr(),
                    coords,
                    samples,
                    normal,
                    direct,
                    adjoint_b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows,
            cols,
            coil_maps,
            frames,
            mode,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn mode(&self) -> DataTerm {
        self.mode
    }

    pub fn coil_maps(&self) -> &[ComplexImage] {
        &self.coil_maps
    }

    pub fn frame_coords(&self, t: usize) -> &[KPoint] {
        &self.frames[t].coords
    }

    pub fn frame_samples(&self, t: usize) -> &CMatrix {
        &self.frames[t].samples
    }

    /// Data loss `‖A_t x − b_t‖²` and its image gradient `2Aᴴ(A_t x − b_t)`.
    fn data_term(&self, t: usize, x: &ComplexImage) -> Result<(f64, ComplexImage)> {
        let frame = &self.frames[t];
        if let Some(normal) = &frame.normal {
            let mut nx = normal.apply(x, &self.coil_maps)?;
            let quad = x.inner(&nx).re;
            let cross = x.inner(&frame.adjoint_b).re;
            let loss = (quad - 2.0 * cross + frame.b_norm2).max(0.0);
            for (g, ab) in nx.data_mut().iter_mut().zip(frame.adjoint_b.data()) {
                *g = (*g - ab) * 2.0;
            }
            Ok((loss, nx))
        } else {
            let op = frame
                .direct
                .as_ref()
                .expect("direct operator present in direct mode");
            let mut residual = op.forward(x, &self.coil_maps)?;
            for (r, b) in residual.data_mut().iter_mut().zip(frame.samples.data()) {
                *r -= b;
            }
            let mut grad = op.adjoint(&residual, &self.coil_maps)?;
            grad.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            Ok((residual.norm_sqr(), grad))
        }
    }
}

/// Adam first/second moments and step count for one variable group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `x` in place.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((xi, &g), m), v) in x.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *xi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Optimisation variables, optimizer buffers and progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconState {
    pub f: ComplexImage,
    pub theta: GeneratorParams,
    pub z: LatentTrajectory,
    pub adam_f: AdamMoments,
    pub adam_theta: AdamMoments,
    pub adam_z: AdamMoments,
    /// Epochs completed over both stages.
    pub epoch: usize,
    pub stage: Stage,
    pub loss_history: Vec<f64>,
}

impl ReconState {
    /// Zero template on `image_dims`, random generator, zero latents.
    pub fn initial(
        config: &ReconConfig,
        full_grid: usize,
        image_dims: (usize, usize),
        frames: usize,
        stage: Stage,
    ) -> Result<Self> {
        let gen = config.generator_config(full_grid);
        let theta = init_params(gen, config.seed, config.init_scale)?;
        let n_theta = theta.len();
        Ok(Self {
            f: ComplexImage::zeros(image_dims.0, image_dims.1),
            theta,
            z: LatentTrajectory::zeros(frames, config.latent_dim),
            adam_f: AdamMoments::zeros(2 * image_dims.0 * image_dims.1),
            adam_theta: AdamMoments::zeros(n_theta),
            adam_z: AdamMoments::zeros(frames * config.latent_dim),
            epoch: 0,
            stage,
            loss_history: Vec::new(),
        })
    }

    /// Coarse generator output for frame `t`.
    pub fn coarse_motion(&self, t: usize) -> Result<MotionField> {
        generator_forward(&self.theta, self.z.row(t))
    }

    /// Motion field of frame `t` resampled to `dims`.
    pub fn motion_at(&self, t: usize, dims: (usize, usize)) -> Result<MotionField> {
        upsample_motion(&self.coarse_motion(t)?, dims)
    }
}

/// Outputs of [`frame_forward`].
#[derive(Clone, Debug)]
pub struct FrameForward {
    pub residual: CMatrix,
    pub frame: ComplexImage,
    pub motion: MotionField,
}

/// `φ_t = U(G_θ(z_t))`, `f_t = D(f, φ_t)`, residual `A_t f_t − b_t`.
pub fn frame_forward(
    state: &ReconState,
    t: usize,
    data: &SpokeFrame,
    coil_maps: &[ComplexImage],
) -> Result<FrameForward> {
    if t >= state.z.frames() {
        return Err(invalid(format!("frame {t} out of range")));
    }
    let motion = state.motion_at(t, state.f.dims())?;
    let frame = warp_forward(&state.f, &motion)?;
    let mut residual = NudftOperator::new(frame.rows(), frame.cols(), &data.coords)
        .forward(&frame, coil_maps)?;
    if residual.rows() != data.samples.rows() || residual.cols() != data.samples.cols() {
        return Err(mismatch("frame samples do not match coil maps and coordinates"));
    }
    for (r, b) in residual.data_mut().iter_mut().zip(data.samples.data()) {
        *r -= b;
    }
    Ok(FrameForward {
        residual,
        frame,
        motion,
    })
}

/// Loss and gradients for one optimisation step.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub data_loss: f64,
    pub smooth_loss: f64,
    /// `∂C/∂Re f + i ∂C/∂Im f`.
    pub f: ComplexImage,
    pub theta: Vec<f64>,
    /// `[frames × dim]`, row-major like the latent trajectory.
    pub z: Vec<f64>,
}

struct FrameContribution {
    loss: f64,
    grad_f: ComplexImage,
    grad_theta: Vec<f64>,
    grad_z: Vec<f64>,
}

fn frame_contribution(state: &ReconState, problem: &Problem, t: usize) -> Result<FrameContribution> {
    let dims = problem.dims();
    let (coarse, trace) = generator_forward_traced(&state.theta, state.z.row(t))?;
    let motion = upsample_motion(&coarse, dims)?;
    let warped = warp_forward(&state.f, &motion)?;
    let (loss, grad_frame) = problem.data_term(t, &warped)?;
    let grad_f = warp_adjoint_image(&grad_frame, &motion)?;
    let grad_motion = warp_grad_motion(&grad_frame, &state.f, &motion)?;
    let grad_coarse = upsample_motion_adjoint(&grad_motion, coarse.dims())?;
    let mut grad_theta = vec![0.0; state.theta.len()];
    let grad_z = generator_backward_traced(&state.theta, &trace, &grad_coarse, &mut grad_theta)?;
    Ok(FrameContribution {
        loss,
        grad_f,
        grad_theta,
        grad_z,
    })
}

/// `λ Σ ‖z_{t+1} − z_t‖²` and its gradient, both multiplied by `weight`.
pub fn smoothness(z: &LatentTrajectory, lambda: f64, weight: f64, grad: &mut [f64]) -> f64 {
    let d = z.dim();
    let mut total = 0.0;
    for t in 0..z.frames().saturating_sub(1) {
        let (a, b) = (z.row(t), z.row(t + 1));
        for k in 0..d {
            let diff = b[k] - a[k];
            total += diff * diff;
            let g = 2.0 * lambda * weight * diff;
            grad[(t + 1) * d + k] += g;
            grad[t * d + k] -= g;
        }
    }
    lambda * weight * total
}

/// Loss over `batch` plus the full-trajectory smoothness term scaled by
/// `|batch|/M`, with exact gradients for `f`, `θ` and `Z`.
pub fn loss_and_gradients(
    state: &ReconState,
    batch: &[usize],
    problem: &Problem,
    lambda: f64,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(invalid("empty frame batch"));
    }
    if state.f.dims() != problem.dims() {
        return Err(mismatch(format!(
            "template is {}x{}, problem grid is {}x{}",
            state.f.rows(),
            state.f.cols(),
            problem.rows,
            problem.cols
        )));
    }
    let m = state.z.frames();
    if m != problem.num_frames() {
        return Err(mismatch(format!(
            "{m} latent vectors for {} frames",
            problem.num_frames()
        )));
    }
    if let Some(&t) = batch.iter().find(|&&t| t >= m) {
        return Err(invalid(format!("batch frame {t} out of range")));
    }
    let contributions: Vec<Result<FrameContribution>> = batch
        .par_iter()
        .map(|&t| frame_contribution(state, problem, t))
        .collect();

    let d = state.z.dim();
    let mut grad_f = ComplexImage::zeros(problem.rows, problem.cols);
    let mut grad_theta = vec![0.0; state.theta.len()];
    let mut grad_z = vec![0.0; m * d];
    let mut data_loss = 0.0;
    for (&t, contribution) in batch.iter().zip(contributions) {
        let c = contribution?;
        if !c.loss.is_finite() {
            return Err(Error::NonFinite(format!("data loss of frame {t} is {}", c.loss)));
        }
        data_loss += c.loss;
        for (a, b) in grad_f.data_mut().iter_mut().zip(c.grad_f.data()) {
            *a += b;
        }
        for (a, b) in grad_theta.iter_mut().zip(&c.grad_theta) {
            *a += b;
        }
        for (k, g) in c.grad_z.iter().enumerate() {
            grad_z[t * d + k] += g;
        }
    }
    let weight = batch.len() as f64 / m as f64;
    let smooth_loss = smoothness(&state.z, lambda, weight, &mut grad_z);
    Ok(Gradients {
        loss: data_loss + smooth_loss,
        data_loss,
        smooth_loss,
        f: grad_f,
        theta: grad_theta,
        z: grad_z,
    })
}

fn complex_as_reals(v: &[Complex64]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Adam update of all three variable groups; `f` is treated as
/// independent real and imaginary coordinates.
pub fn adam_step(state: &mut ReconState, grads: &Gradients, config: &AdamConfig) -> Result<()> {
    if grads.f.dims() != state.f.dims()
        || grads.theta.len() != state.theta.len()
        || grads.z.len() != state.z.data().len()
    {
        return Err(mismatch("gradient shapes do not match the state"));
    }
    let (b1, b2, eps) = (config.beta1, config.beta2, config.eps);
    let mut f_real = complex_as_reals(state.f.data());
    let g_real = complex_as_reals(grads.f.data());
    state.adam_f.update(&mut f_real, &g_real, config.lr_f, b1, b2, eps);
    for (v, pair) in state.f.data_mut().iter_mut().zip(f_real.chunks_exact(2)) {
        *v = Complex64::new(pair[0], pair[1]);
    }
    state
        .adam_theta
        .update(&mut state.theta.values, &grads.theta, config.lr_theta, b1, b2, eps);
    state
        .adam_z
        .update(state.z.data_mut(), &grads.z, config.lr_z, b1, b2, eps);
    Ok(())
}

/// Frame visiting order of one epoch; depends only on `(seed, epoch)`.
pub fn epoch_batches(frames: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..frames).collect();
    if batch < frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
    }
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Full loss (all frames, full smoothness term) at the current state.
pub fn total_loss(state: &ReconState, problem: &Problem, lambda: f64) -> Result<f64> {
    let all: Vec<usize> = (0..problem.num_frames()).collect();
    Ok(loss_and_gradients(state, &all, problem, lambda)?.loss)
}

/// Runs the two-stage schedule; holds the problems so a run can be
/// advanced epoch by epoch and resumed from a saved state.
pub struct Solver {
    pub config: ReconConfig,
    full_grid: usize,
    coarse: Option<Problem>,
    fine: Problem,
}

impl Solver {
    pub fn new(dataset: &Dataset, config: ReconConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        if dataset.rows != dataset.cols || !dataset.rows.is_power_of_two() {
            return Err(invalid(format!(
                "reconstruction needs a square power-of-two grid, got {}x{}",
                dataset.rows, dataset.cols
            )));
        }
        config.generator_config(dataset.rows).validate()?;
        let coarse = if config.epochs_coarse > 0 {
            Some(Problem::coarse(dataset, config.coarse_fraction, config.data_term)?)
        } else {
            None
        };
        let fine = Problem::full(dataset, config.data_term)?;
        Ok(Self {
            config,
            full_grid: dataset.rows,
            coarse,
            fine,
        })
    }

    pub fn fine_problem(&self) -> &Problem {
        &self.fine
    }

    pub fn coarse_problem(&self) -> Option<&Problem> {
        self.coarse.as_ref()
    }

    pub fn total_epochs(&self) -> usize {
        self.config.epochs_coarse + self.config.epochs_fine
    }

    pub fn initial_state(&self) -> Result<ReconState> {
        let (problem, stage) = match &self.coarse {
            Some(p) => (p, Stage::Coarse),
            None => (&self.fine, Stage::Fine),
        };
        ReconState::initial(
            &self.config,
            self.full_grid,
            problem.dims(),
            problem.num_frames(),
            stage,
        )
    }

    fn problem_for(&self, stage: Stage) -> &Problem {
        match stage {
            Stage::Coarse => self.coarse.as_ref().expect("coarse problem exists"),
            Stage::Fine => &self.fine,
        }
    }

    /// Moves a coarse state to full resolution: `θ` and `Z` are kept, the
    /// template restarts from zeros on the fine grid.
    fn promote(&self, state: &mut ReconState) {
        let (rows, cols) = self.fine.dims();
        state.f = ComplexImage::zeros(rows, cols);
        state.adam_f = AdamMoments::zeros(2 * rows * cols);
        state.stage = Stage::Fine;
    }

    /// One pass over all frames. The state is left untouched when a
    /// non-finite loss is met.
    pub fn run_epoch(&self, state: &mut ReconState) -> Result<f64> {
        if state.epoch >= self.total_epochs() {
            return Err(invalid("schedule already finished"));
        }
        if state.stage == Stage::Coarse && state.epoch >= self.config.epochs_coarse {
            self.promote(state);
        }
        let problem = self.problem_for(state.stage);
        let m = problem.num_frames();
        let batches = epoch_batches(m, self.config.batch_frames, self.config.seed, state.epoch);
        let mut epoch_loss = 0.0;
        let mut next = state.clone();
        for batch in batches {
            let grads = loss_and_gradients(&next, &batch, problem, self.config.lambda_smooth)?;
            let finite = grads.loss.is_finite()
                && grads.theta.iter().all(|v| v.is_finite())
                && grads.z.iter().all(|v| v.is_finite())
                && grads.f.data().iter().all(|v| v.re.is_finite() && v.im.is_finite());
            if !finite {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient in epoch {} (frames {:?})",
                    state.epoch, batch
                )));
            }
            epoch_loss += grads.loss;
            adam_step(&mut next, &grads, &self.config.adam)?;
        }
        next.epoch += 1;
        next.loss_history.push(epoch_loss);
        *state = next;
        if state.stage == Stage::Fine {
            self.check_monotone(state);
        }
        Ok(epoch_loss)
    }

    fn check_monotone(&self, state: &ReconState) {
        let fine_epochs = state.epoch.saturating_sub(self.config.epochs_coarse);
        if fine_epochs > 10 {
            let h = &state.loss_history;
            let (now, before) = (h[h.len() - 1], h[h.len() - 11]);
            if now > before {
                warn!(
                    "loss rose over the last 10 epochs ({before:.6e} -> {now:.6e}) at epoch {}",
                    state.epoch
                );
            }
        }
    }

    /// Continues `state` until the schedule is complete, calling `observe`
    /// after each epoch.
    pub fn run(
        &self,
        state: &mut ReconState,
        mut observe: impl FnMut(&ReconState),
    ) -> Result<()> {
        while state.epoch < self.total_epochs() {
            self.run_epoch(state)?;
            observe(state);
        }
        Ok(())
    }

    /// Loss of `state` on the full-resolution problem.
    pub fn final_loss(&self, state: &ReconState) -> Result<f64> {
        total_loss(state, &self.fine, self.config.lambda_smooth)
    }
}

/// Runs both stages from scratch and returns the final state.
pub fn progressive_solve(dataset: &Dataset, config: &ReconConfig) -> Result<ReconState> {
    let solver = Solver::new(dataset, config.clone())?;
    let mut state = solver.initial_state()?;
    solver.run(&mut state, |_| {})?;
    Ok(state)
}
