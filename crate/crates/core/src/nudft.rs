//! Exact non-uniform DFT for radial trajectories.
//!
//! k-space coordinates are in cycles/pixel, `|k| ≤ 0.5`, paired as
//! `[kx, ky]` where `kx` pairs with the column axis and `ky` with the row
//! axis. Pixel `(r, c)` sits at spatial position `(c − cols/2, r − rows/2)`.
//!
//! The forward model for coil `c` at point `k` is
//! `Σ_x s_c(x) f(x) exp(−i2π k·x)`; the adjoint is its exact conjugate
//! transpose. [`ToeplitzNormal`] evaluates the normal operator `AᴴA`
//! exactly through a circulant embedding of its convolution kernel.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::image::{CMatrix, ComplexImage};

pub type KPoint = [f64; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Spoke-angle ordering across the acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    BitReversed,
    GoldenAngle,
    Uniform,
}

impl Ordering {
    pub fn as_u8(self) -> u8 {
        match self {
            Ordering::BitReversed => 0,
            Ordering::GoldenAngle => 1,
            Ordering::Uniform => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Ordering::BitReversed),
            1 => Some(Ordering::GoldenAngle),
            2 => Some(Ordering::Uniform),
            _ => None,
        }
    }
}

/// One time frame: sampling locations plus multicoil samples
/// (`samples` has one row per coil, one column per k-point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpokeFrame {
    pub frame_index: usize,
    pub coords: Vec<KPoint>,
    pub samples: CMatrix,
}

impl SpokeFrame {
    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(invalid(format!("frame {} has no samples", self.frame_index)));
        }
        if self.samples.cols() != self.coords.len() {
            return Err(mismatch(format!(
                "frame {}: {} coordinates but {} sample columns",
                self.frame_index,
                self.coords.len(),
                self.samples.cols()
            )));
        }
        if let Some(k) = self
            .coords
            .iter()
            .find(|k| !(k[0].abs() <= 0.5 && k[1].abs() <= 0.5))
        {
            return Err(invalid(format!(
                "frame {}: k-point ({}, {}) outside [-0.5, 0.5]",
                self.frame_index, k[0], k[1]
            )));
        }
        Ok(())
    }
}

/// Radial trajectory split into frames of consecutive spokes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub ordering: Ordering,
    pub total_spokes: usize,
    pub spokes_per_frame: usize,
    pub samples_per_spoke: usize,
    /// Spoke angles in acquisition order, radians in `[0, π)`.
    pub angles: Vec<f64>,
    /// Per-frame k-point lists, spokes concatenated in acquisition order.
    pub frames: Vec<Vec<KPoint>>,
}

impl Trajectory {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Bit-reversal permutation of `0..n`.
pub fn bit_reversed_order(n: usize) -> Result<Vec<usize>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(invalid(format!("bit-reversed ordering needs a power of two, got {n}")));
    }
    let bits = n.trailing_zeros();
    Ok((0..n)
        .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
        .collect())
}

/// Radial positions of the samples along one spoke: `(j − n/2)/n`, which
/// spans `[−0.5, 0.5)` and includes `k = 0` exactly.
pub fn radial_positions(samples_per_spoke: usize) -> Vec<f64> {
    let n = samples_per_spoke as f64;
    let half = (samples_per_spoke / 2) as f64;
    (0..samples_per_spoke).map(|j| (j as f64 - half) / n).collect()
}

pub fn make_trajectory(
    total_spokes: usize,
    samples_per_spoke: usize,
    spokes_per_frame: usize,
    ordering: Ordering,
) -> Result<Trajectory> {
    if total_spokes == 0 || spokes_per_frame == 0 || samples_per_spoke == 0 {
        return Err(invalid("trajectory sizes must be positive"));
    }
    if !total_spokes.is_multiple_of(spokes_per_frame) {
        return Err(invalid(format!(
            "total_spokes {total_spokes} not divisible by spokes_per_frame {spokes_per_frame}"
        )));
    }
    let angles: Vec<f64> = match ordering {
        Ordering::BitReversed => bit_reversed_order(total_spokes)?
            .into_iter()
            .map(|s| PI * s as f64 / total_spokes as f64)
            .collect(),
        Ordering::GoldenAngle => {
            let conj = (5f64.sqrt() - 1.0) / 2.0;
            (0..total_spokes)
                .map(|i| PI * (i as f64 * conj).fract())
                .collect()
        }
        Ordering::Uniform => (0..total_spokes)
            .map(|i| PI * i as f64 / total_spokes as f64)
            .collect(),
    };
    let radii = radial_positions(samples_per_spoke);
    let frames = angles
        .chunks(spokes_per_frame)
        .map(|chunk| {
            chunk
                .iter()
                .flat_map(|&a| {
                    let (s, c) = a.sin_cos();
                    radii.iter().map(move |&r| [r * c, r * s])
                })
                .collect()
        })
        .collect();
    Ok(Trajectory {
        ordering,
        total_spokes,
        spokes_per_frame,
        samples_per_spoke,
        angles,
        frames,
    })
}

fn check_maps(rows: usize, cols: usize, coil_maps: &[ComplexImage]) -> Result<()> {
    if coil_maps.is_empty() {
        return Err(invalid("at least one coil map is required"));
    }
    for (i, m) in coil_maps.iter().enumerate() {
        if m.dims() != (rows, cols) {
            return Err(mismatch(format!(
                "coil map {i} is {}x{}, image is {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
    }
    Ok(())
}

/// `exp(sign · i2π k (j − n/2))` for `j in 0..n`.
fn axis_phases(k: f64, n: usize, sign: f64) -> impl Iterator<Item = Complex64> {
    let half = (n / 2) as f64;
    (0..n).map(move |j| {
        let (s, c) = (sign * 2.0 * PI * k * (j as f64 - half)).sin_cos();
        Complex64::new(c, s)
    })
}

/// Separable phase tables for a fixed grid and coordinate set.
#[derive(Clone, Debug)]
pub struct NudftOperator {
    rows: usize,
    cols: usize,
    points: usize,
    // exp(−i2π kx x), points × cols
    ex: Vec<Complex64>,
    // exp(−i2π ky y), points × rows
    ey: Vec<Complex64>,
}

impl NudftOperator {
    pub fn new(rows: usize, cols: usize, coords: &[KPoint]) -> Self {
        let mut ex = Vec::with_capacity(coords.len() * cols);
        let mut ey = Vec::with_capacity(coords.len() * rows);
        for k in coords {
            ex.extend(axis_phases(k[0], cols, -1.0));
            ey.extend(axis_phases(k[1], rows, -1.0));
        }
        Self {
            rows,
            cols,
            points: coords.len(),
            ex,
            ey,
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Single-coil transform of an already coil-weighted image.
    fn forward_plain(&self, g: &[Complex64], out: &mut [Complex64]) {
        let (rows, cols) = (self.rows, self.cols);
        for (p, o) in out.iter_mut().enumerate() {
            let ex = &self.ex[p * cols..(p + 1) * cols];
            let ey = &self.ey[p * rows..(p + 1) * rows];
            let mut acc = ZERO;
            for (y, &wy) in ey.iter().enumerate() {
                let row = &g[y * cols..(y + 1) * cols];
                let mut s = ZERO;
                for (a, b) in ex.iter().zip(row) {
                    s += a * b;
                }
                acc += wy * s;
            }
            *o = acc;
        }
    }

    /// Adds `Σ_k y_k exp(+i2π k·x)` into `out`.
    fn adjoint_plain(&self, samples: &[Complex64], out: &mut [Complex64]) {
        let (rows, cols) = (self.rows, self.cols);
        for (p, &yk) in samples.iter().enumerate() {
            if yk == ZERO {
                continue;
            }
            let ex = &self.ex[p * cols..(p + 1) * cols];
            let ey = &self.ey[p * rows..(p + 1) * rows];
            for (y, wy) in ey.iter().enumerate() {
                let t = wy.conj() * yk;
                let row = &mut out[y * cols..(y + 1) * cols];
                for (o, a) in row.iter_mut().zip(ex) {
                    *o += a.conj() * t;
                }
            }
        }
    }

    pub fn forward(&self, image: &ComplexImage, coil_maps: &[ComplexImage]) -> Result<CMatrix> {
        if image.dims() != (self.rows, self.cols) {
            return Err(mismatch(format!(
                "image is {}x{}, operator built for {}x{}",
                image.rows(),
                image.cols(),
                self.rows,
                self.cols
            )));
        }
        check_maps(self.rows, self.cols, coil_maps)?;
        let mut out = CMatrix::zeros(coil_maps.len(), self.points);
        let mut g = vec![ZERO; self.rows * self.cols];
        for (c, map) in coil_maps.iter().enumerate() {
            for ((gi, s), f) in g.iter_mut().zip(map.data()).zip(image.data()) {
                *gi = s * f;
            }
            self.forward_plain(&g, out.row_mut(c));
        }
        Ok(out)
    }

    pub fn adjoint(&self, samples: &CMatrix, coil_maps: &[ComplexImage]) -> Result<ComplexImage> {
        check_maps(self.rows, self.cols, coil_maps)?;
        if samples.rows() != coil_maps.len() || samples.cols() != self.points {
            return Err(mismatch(format!(
                "samples are {}x{}, expected {}x{}",
                samples.rows(),
                samples.cols(),
                coil_maps.len(),
                self.points
            )));
        }
        let mut out = ComplexImage::zeros(self.rows, self.cols);
        let mut acc = vec![ZERO; self.rows * self.cols];
        for (c, map) in coil_maps.iter().enumerate() {
            acc.iter_mut().for_each(|v| *v = ZERO);
            self.adjoint_plain(samples.row(c), &mut acc);
            for ((o, s), a) in out.data_mut().iter_mut().zip(map.data()).zip(&acc) {
                *o += s.conj() * a;
            }
        }
        Ok(out)
    }
}

/// Multicoil forward NUDFT: `[coils × points]` samples.
pub fn nudft_forward(
    image: &ComplexImage,
    coil_maps: &[ComplexImage],
    coords: &[KPoint],
) -> Result<CMatrix> {
    NudftOperator::new(image.rows(), image.cols(), coords).forward(image, coil_maps)
}

/// Exact adjoint of [`nudft_forward`].
pub fn nudft_adjoint(
    samples: &CMatrix,
    coil_maps: &[ComplexImage],
    coords: &[KPoint],
) -> Result<ComplexImage> {
    let first = coil_maps
        .first()
        .ok_or_else(|| invalid("at least one coil map is required"))?;
    if samples.cols() != coords.len() {
        return Err(mismatch(format!(
            "{} sample columns but {} coordinates",
            samples.cols(),
            coords.len()
        )));
    }
    NudftOperator::new(first.rows(), first.cols(), coords).adjoint(samples, coil_maps)
}

/// Unnormalized 2D FFT on a fixed grid, row-major.
struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// Transform in place. Only the first `active_rows` rows go through
    /// the row pass; on forward they are the only nonzero rows, on inverse
    /// they are the only rows the caller reads.
    fn process(&self, buf: &mut [Complex64], inverse: bool, active_rows: usize) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let active = &mut buf[..active_rows * self.cols];
        if !inverse {
            row_fft.process(active);
        }
        let mut column = vec![ZERO; self.rows];
        for c in 0..self.cols {
            for (r, v) in column.iter_mut().enumerate() {
                *v = buf[r * self.cols + c];
            }
            col_fft.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                buf[r * self.cols + c] = *v;
            }
        }
        if inverse {
            row_fft.process(&mut buf[..active_rows * self.cols]);
        }
    }
}

/// Exact normal operator `AᴴA` of a fixed sampling pattern, applied as a
/// zero-padded circular convolution with the point-spread kernel
/// `K(d) = Σ_k exp(+i2π k·d)` on a `2rows × 2cols` grid.
pub struct ToeplitzNormal {
    rows: usize,
    cols: usize,
    kernel_hat: Vec<Complex64>,
    fft: Fft2,
}

impl std::fmt::Debug for ToeplitzNormal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzNormal")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl ToeplitzNormal {
    /// Builds the kernel for `coords`, each point weighted by `weights`
    /// (all ones when `None`).
    pub fn new(rows: usize, cols: usize, coords: &[KPoint], weights: Option<&[f64]>) -> Self {
        let (er, ec) = (2 * rows - 1, 2 * cols - 1);
        let mut kernel = vec![ZERO; er * ec];
        let mut ey = vec![ZERO; er];
        let mut ex = vec![ZERO; ec];
        for (p, k) in coords.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[p]);
            for (i, v) in ey.iter_mut().enumerate() {
                let d = i as f64 - (rows - 1) as f64;
                let (s, c) = (2.0 * PI * k[1] * d).sin_cos();
                *v = Complex64::new(c * w, s * w);
            }
            for (i, v) in ex.iter_mut().enumerate() {
                let d = i as f64 - (cols - 1) as f64;
                let (s, c) = (2.0 * PI * k[0] * d).sin_cos();
                *v = Complex64::new(c, s);
            }
            for (i, wy) in ey.iter().enumerate() {
                let row = &mut kernel[i * ec..(i + 1) * ec];
                for (o, wx) in row.iter_mut().zip(&ex) {
                    *o += wy * wx;
                }
            }
        }
        let (pr, pc) = (2 * rows, 2 * cols);
        let mut embedded = vec![ZERO; pr * pc];
        for i in 0..er {
            let dy = i as isize - (rows as isize - 1);
            let r = dy.rem_euclid(pr as isize) as usize;
            for j in 0..ec {
                let dx = j as isize - (cols as isize - 1);
                let c = dx.rem_euclid(pc as isize) as usize;
                embedded[r * pc + c] = kernel[i * ec + j];
            }
        }
        let fft = Fft2::new(pr, pc);
        fft.process(&mut embedded, false, pr);
        let scale = 1.0 / (pr * pc) as f64;
        embedded.iter_mut().for_each(|v| *v *= scale);
        Self {
            rows,
            cols,
            kernel_hat: embedded,
            fft,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Single-coil normal operator applied to a `rows × cols` buffer.
    pub fn convolve(&self, x: &[Complex64], out: &mut [Complex64]) {
        let (rows, cols) = (self.rows, self.cols);
        let pc = 2 * cols;
        let mut buf = vec![ZERO; 4 * rows * cols];
        for r in 0..rows {
            buf[r * pc..r * pc + cols].copy_from_slice(&x[r * cols..(r + 1) * cols]);
        }
        self.fft.process(&mut buf, false, rows);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft.process(&mut buf, true, rows);
        for r in 0..rows {
            out[r * cols..(r + 1) * cols].copy_from_slice(&buf[r * pc..r * pc + cols]);
        }
    }

    /// `Σ_c conj(s_c) ⊙ (K ⊛ (s_c ⊙ x))`.
    pub fn apply(&self, image: &ComplexImage, coil_maps: &[ComplexImage]) -> Result<ComplexImage> {
        if image.dims() != (self.rows, self.cols) {
            return Err(mismatch("image does not match normal operator grid"));
        }
        check_maps(self.rows, self.cols, coil_maps)?;
        let n = self.rows * self.cols;
        let mut out = ComplexImage::zeros(self.rows, self.cols);
        let mut g = vec![ZERO; n];
        let mut h = vec![ZERO; n];
        for map in coil_maps {
            for ((gi, s), f) in g.iter_mut().zip(map.data()).zip(image.data()) {
                *gi = s * f;
            }
            self.convolve(&g, &mut h);
            for ((o, s), v) in out.data_mut().iter_mut().zip(map.data()).zip(&h) {
                *o += s.conj() * v;
            }
        }
        Ok(out)
    }
}
