//! Motion generator: a small network mapping a latent vector to a
//! displacement field on the coarse motion grid, with a hand-derived
//! backward pass.
//!
//! Conv decoder layout (`g` = coarse grid size, `s = g/8`):
//!
//! | layer | kind    | input          | output         |
//! |-------|---------|----------------|----------------|
//! | 0     | dense   | d              | 32·s·s         |
//! | 1     | conv3x3 | 32 × 2s × 2s   | 32 × 2s × 2s   |
//! | 2     | conv3x3 | 32 × 4s × 4s   | 16 × 4s × 4s   |
//! | 3     | conv3x3 | 16 × g × g     | 8 × g × g      |
//! | 4     | conv3x3 | 8 × g × g      | 2 × g × g      |
//!
//! Layers 1–3 are each preceded by a nearest-neighbour ×2 upsample, and
//! every layer except the last is followed by the activation. At `d = 1`,
//! `g = 16` this is 15 434 parameters.
//!
//! The MLP variant is `d → 64 → 64 → 2g²` with the activation after the
//! two hidden layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::image::MotionField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    ConvDecoder,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub architecture: Architecture,
    pub activation: Activation,
    pub latent_dim: usize,
    /// Coarse motion grid size (square).
    pub grid: usize,
}

impl GeneratorConfig {
    pub fn conv(latent_dim: usize, grid: usize) -> Self {
        Self {
            architecture: Architecture::ConvDecoder,
            activation: Activation::Tanh,
            latent_dim,
            grid,
        }
    }

    pub fn mlp(latent_dim: usize, grid: usize) -> Self {
        Self {
            architecture: Architecture::Mlp,
            activation: Activation::Tanh,
            latent_dim,
            grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        match self.architecture {
            Architecture::ConvDecoder if self.grid < 8 || !self.grid.is_multiple_of(8) => Err(invalid(
                format!("conv decoder needs a motion grid divisible by 8, got {}", self.grid),
            )),
            Architecture::Mlp if self.grid == 0 => Err(invalid("empty motion grid")),
            _ => Ok(()),
        }
    }

    /// Parameterised layers in evaluation order.
    pub fn layout(&self) -> Vec<LayerSpec> {
        let d = self.latent_dim;
        let g = self.grid;
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |kind, input: [usize; 3], output: [usize; 3]| {
            let spec = LayerSpec {
                kind,
                input,
                output,
                offset,
            };
            offset += spec.param_count();
            layers.push(spec);
        };
        match self.architecture {
            Architecture::ConvDecoder => {
                let s = g / 8;
                push(LayerKind::Dense, [d, 1, 1], [32 * s * s, 1, 1]);
                let mut side = s;
                for (cin, cout) in [(32, 32), (32, 16), (16, 8)] {
                    side *= 2;
                    push(LayerKind::Conv3x3, [cin, side, side], [cout, side, side]);
                }
                push(LayerKind::Conv3x3, [8, g, g], [2, g, g]);
            }
            Architecture::Mlp => {
                push(LayerKind::Dense, [d, 1, 1], [64, 1, 1]);
                push(LayerKind::Dense, [64, 1, 1], [64, 1, 1]);
                push(LayerKind::Dense, [64, 1, 1], [2 * g * g, 1, 1]);
            }
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerSpec::param_count).sum()
    }

    fn ops(&self) -> Vec<Op> {
        let layout = self.layout();
        let last = layout.len() - 1;
        let mut ops = Vec::new();
        for (i, layer) in layout.into_iter().enumerate() {
            if layer.kind == LayerKind::Conv3x3 && layer.input[1] > 1 && i > 0 && i < last {
                let [c, h, w] = layer.input;
                ops.push(Op::Upsample2 {
                    channels: c,
                    rows: h / 2,
                    cols: w / 2,
                });
            }
            ops.push(Op::Layer(layer));
            if i < last {
                ops.push(Op::Activation);
            }
        }
        ops
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv3x3,
}

/// One parameterised layer: `[channels, rows, cols]` shapes (dense layers
/// use `[n, 1, 1]`) and the offset of its weights in the flat vector.
/// Weights come first (`[out][in]` or `[cout][cin][3][3]`), then biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.input[0] * self.output[0],
            LayerKind::Conv3x3 => self.input[0] * self.output[0] * 9,
        }
    }

    pub fn bias_count(&self) -> usize {
        self.output[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.input[0],
            LayerKind::Conv3x3 => self.input[0] * 9,
        }
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let p = &params[self.offset..self.offset + self.param_count()];
        let (w, b) = p.split_at(self.weight_count());
        match self.kind {
            LayerKind::Dense => {
                let n = self.input[0];
                b.iter()
                    .enumerate()
                    .map(|(o, &bo)| bo + w[o * n..(o + 1) * n].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                    .collect()
            }
            LayerKind::Conv3x3 => {
                let [cin, h, wd] = self.input;
                let cout = self.output[0];
                let plane = h * wd;
                let mut out = vec![0.0; cout * plane];
                for o in 0..cout {
                    let dst = &mut out[o * plane..(o + 1) * plane];
                    dst.iter_mut().for_each(|v| *v = b[o]);
                    for c in 0..cin {
                        let src = &x[c * plane..(c + 1) * plane];
                        let k = &w[(o * cin + c) * 9..(o * cin + c + 1) * 9];
                        conv_accumulate(src, k, dst, h, wd);
                    }
                }
                out
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_w = self.weight_count();
        let p = &params[self.offset..self.offset + self.param_count()];
        let w = &p[..n_w];
        let g = &mut grad[self.offset..self.offset + self.param_count()];
        let (gw, gb) = g.split_at_mut(n_w);
        match self.kind {
            LayerKind::Dense => {
                let n = self.input[0];
                let mut dx = vec![0.0; n];
                for (o, &d) in dy.iter().enumerate() {
                    gb[o] += d;
                    let row = &w[o * n..(o + 1) * n];
                    let grow = &mut gw[o * n..(o + 1) * n];
                    for i in 0..n {
                        grow[i] += d * x[i];
                        dx[i] += row[i] * d;
                    }
                }
                dx
            }
            LayerKind::Conv3x3 => {
                let [cin, h, wd] = self.input;
                let cout = self.output[0];
                let plane = h * wd;
                let mut dx = vec![0.0; cin * plane];
                for o in 0..cout {
                    let d = &dy[o * plane..(o + 1) * plane];
                    gb[o] += d.iter().sum::<f64>();
                    for c in 0..cin {
                        let src = &x[c * plane..(c + 1) * plane];
                        let base = (o * cin + c) * 9;
                        conv_weight_grad(src, d, &mut gw[base..base + 9], h, wd);
                        conv_transpose_accumulate(
                            d,
                            &w[base..base + 9],
                            &mut dx[c * plane..(c + 1) * plane],
                            h,
                            wd,
                        );
                    }
                }
                dx
            }
        }
    }
}

/// `dst[i][j] += Σ k[a][b] · src[i+a−1][j+b−1]` with zero padding.
fn conv_accumulate(src: &[f64], k: &[f64], dst: &mut [f64], h: usize, w: usize) {
    for a in 0..3 {
        for b in 0..3 {
            let kv = k[a * 3 + b];
            let (i0, i1) = valid_range(a, h);
            let (j0, j1) = valid_range(b, w);
            for i in i0..i1 {
                let si = i + a - 1;
                let s = &src[si * w + j0 + b - 1..si * w + j1 + b - 1];
                let d = &mut dst[i * w + j0..i * w + j1];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += kv * sv;
                }
            }
        }
    }
}

fn conv_weight_grad(src: &[f64], dy: &[f64], gk: &mut [f64], h: usize, w: usize) {
    for a in 0..3 {
        for b in 0..3 {
            let (i0, i1) = valid_range(a, h);
            let (j0, j1) = valid_range(b, w);
            let mut acc = 0.0;
            for i in i0..i1 {
                let si = i + a - 1;
                let s = &src[si * w + j0 + b - 1..si * w + j1 + b - 1];
                let d = &dy[i * w + j0..i * w + j1];
                acc += d.iter().zip(s).map(|(x, y)| x * y).sum::<f64>();
            }
            gk[a * 3 + b] += acc;
        }
    }
}

fn conv_transpose_accumulate(dy: &[f64], k: &[f64], dx: &mut [f64], h: usize, w: usize) {
    for a in 0..3 {
        for b in 0..3 {
            let kv = k[a * 3 + b];
            let (i0, i1) = valid_range(a, h);
            let (j0, j1) = valid_range(b, w);
            for i in i0..i1 {
                let si = i + a - 1;
                let d = &dy[i * w + j0..i * w + j1];
                let s = &mut dx[si * w + j0 + b - 1..si * w + j1 + b - 1];
                for (sv, dv) in s.iter_mut().zip(d) {
                    *sv += kv * dv;
                }
            }
        }
    }
}

/// Output indices `i` for which `i + tap − 1` is inside `0..n`.
#[inline]
fn valid_range(tap: usize, n: usize) -> (usize, usize) {
    match tap {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Layer(LayerSpec),
    Upsample2 { channels: usize, rows: usize, cols: usize },
    Activation,
}

/// Flat parameter vector with the configuration that fixes its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub config: GeneratorConfig,
    pub values: Vec<f64>,
}

impl GeneratorParams {
    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            values: vec![0.0; config.param_count()],
        })
    }

    pub fn from_values(config: GeneratorConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.param_count() {
            return Err(mismatch(format!(
                "generator expects {} parameters, got {}",
                config.param_count(),
                values.len()
            )));
        }
        Ok(Self { config, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> Vec<LayerSpec> {
        self.config.layout()
    }
}

/// Uniform `±scale/√fan_in` weights and zero biases.
pub fn init_params(config: GeneratorConfig, seed: u64, scale: f64) -> Result<GeneratorParams> {
    if !(scale > 0.0) {
        return Err(invalid(format!("init scale must be positive, got {scale}")));
    }
    let mut params = GeneratorParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in config.layout() {
        let bound = scale / (layer.fan_in() as f64).sqrt();
        for v in &mut params.values[layer.offset..layer.offset + layer.weight_count()] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
}

fn check_latent(config: &GeneratorConfig, z: &[f64]) -> Result<()> {
    if z.len() != config.latent_dim {
        return Err(mismatch(format!(
            "latent vector has length {}, generator expects {}",
            z.len(),
            config.latent_dim
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent vector".into()));
    }
    Ok(())
}

fn run_forward(theta: &GeneratorParams, z: &[f64]) -> Result<(MotionField, ForwardTrace)> {
    let config = theta.config;
    check_latent(&config, z)?;
    let mut inputs = Vec::new();
    let mut x = z.to_vec();
    for op in config.ops() {
        let y = match op {
            Op::Layer(layer) => layer.forward(&theta.values, &x),
            Op::Upsample2 { channels, rows, cols } => upsample_nearest(&x, channels, rows, cols),
            Op::Activation => x.iter().map(|&v| config.activation.apply(v)).collect(),
        };
        inputs.push(std::mem::replace(&mut x, y));
    }
    let g = config.grid;
    Ok((MotionField::from_vec(g, g, x)?, ForwardTrace { inputs }))
}

/// `G_θ(z)` on the coarse grid, in coarse-grid pixels.
pub fn generator_forward(theta: &GeneratorParams, z: &[f64]) -> Result<MotionField> {
    run_forward(theta, z).map(|(field, _)| field)
}

/// Forward pass that also returns the trace needed by
/// [`generator_backward_traced`].
pub fn generator_forward_traced(
    theta: &GeneratorParams,
    z: &[f64],
) -> Result<(MotionField, ForwardTrace)> {
    run_forward(theta, z)
}

/// Gradients of `⟨upstream, G_θ(z)⟩` with respect to `θ` and `z`.
pub fn generator_backward(
    theta: &GeneratorParams,
    z: &[f64],
    upstream: &MotionField,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, trace) = run_forward(theta, z)?;
    let mut grad_theta = vec![0.0; theta.len()];
    let grad_z = generator_backward_traced(theta, &trace, upstream, &mut grad_theta)?;
    Ok((grad_theta, grad_z))
}

/// Backward pass reusing a forward trace; parameter gradients are added
/// into `grad_theta`, the latent gradient is returned.
pub fn generator_backward_traced(
    theta: &GeneratorParams,
    trace: &ForwardTrace,
    upstream: &MotionField,
    grad_theta: &mut [f64],
) -> Result<Vec<f64>> {
    let config = theta.config;
    let g = config.grid;
    if upstream.dims() != (g, g) {
        return Err(mismatch(format!(
            "upstream gradient is {}x{}, generator grid is {g}x{g}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    if grad_theta.len() != theta.len() {
        return Err(mismatch("parameter gradient buffer has wrong length"));
    }
    let ops = config.ops();
    let mut dy = upstream.data().to_vec();
    for (op, x) in ops.iter().zip(&trace.inputs).rev() {
        dy = match *op {
            Op::Layer(layer) => layer.backward(&theta.values, x, &dy, grad_theta),
            Op::Upsample2 { channels, rows, cols } => upsample_nearest_adjoint(&dy, channels, rows, cols),
            Op::Activation => x
                .iter()
                .zip(&dy)
                .map(|(&v, &d)| d * config.activation.derivative(v))
                .collect(),
        };
    }
    Ok(dy)
}

fn upsample_nearest(x: &[f64], channels: usize, rows: usize, cols: usize) -> Vec<f64> {
    let (r2, c2) = (2 * rows, 2 * cols);
    let mut out = vec![0.0; channels * r2 * c2];
    for ch in 0..channels {
        for i in 0..r2 {
            for j in 0..c2 {
                out[(ch * r2 + i) * c2 + j] = x[(ch * rows + i / 2) * cols + j / 2];
            }
        }
    }
    out
}

fn upsample_nearest_adjoint(dy: &[f64], channels: usize, rows: usize, cols: usize) -> Vec<f64> {
    let (r2, c2) = (2 * rows, 2 * cols);
    let mut dx = vec![0.0; channels * rows * cols];
    for ch in 0..channels {
        for i in 0..r2 {
            for j in 0..c2 {
                dx[(ch * rows + i / 2) * cols + j / 2] += dy[(ch * r2 + i) * c2 + j];
            }
        }
    }
    dx
}

/// Latent vectors for all frames, `[frames × dim]` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LatentTrajectory {
    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn from_vec(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        if data.len() != frames * dim {
            return Err(mismatch(format!(
                "latent buffer has {} entries, expected {frames}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent trajectory".into()));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// First latent coordinate of every frame.
    pub fn trace(&self, coord: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.data[t * self.dim + coord]).collect()
    }
}
