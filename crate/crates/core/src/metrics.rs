//! Accuracy measures against simulator ground truth.
//!
//! The model only fixes the template up to the deformation reference: any
//! `f` seen through a motion field is as good as the unwarped one. Both
//! estimate and truth are therefore moved to the frame of smallest
//! respiratory displacement before comparison. The template is warped to
//! that frame and motion fields are expressed relative to it by exact
//! composition. A residual global translation is removed by an integer
//! shift search when computing PSNR.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::ReconState;
use crate::error::{invalid, mismatch, Result};
use crate::generator::LatentTrajectory;
use crate::image::{ComplexImage, MotionField};
use crate::phantom::{lung_mask, GroundTruth};
use crate::warp::warp_forward;

/// PSNR reported for a zero error.
pub const PSNR_CAP: f64 = 100.0;
/// Largest translation (pixels per axis) searched when registering images.
pub const MAX_SHIFT: i64 = 3;
const COMPOSE_ITERATIONS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr_template: f64,
    pub motion_epe: f64,
    pub latent_corr: f64,
    pub period_error: f64,
    pub runtime: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "psnr_template,motion_epe,latent_corr,period_error,runtime";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.psnr_template, self.motion_epe, self.latent_corr, self.period_error, self.runtime
        )
    }
}

/// A reconstruction reduced to what the metrics look at.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub template: ComplexImage,
    /// Per-frame motion on the template grid.
    pub motion: Vec<MotionField>,
    pub latents: LatentTrajectory,
}

impl Estimate {
    /// The ground truth viewed as an estimate, with the respiratory signal
    /// as a one-dimensional latent.
    pub fn from_truth(truth: &GroundTruth) -> Self {
        let m = truth.respiratory_signal.len();
        Self {
            template: truth.template.clone(),
            motion: truth.motion.clone(),
            latents: LatentTrajectory::from_vec(m, 1, truth.respiratory_signal.clone())
                .expect("one latent per frame"),
        }
    }

    /// Template, per-frame motion on the template grid and latents of a
    /// reconstruction state.
    pub fn from_state(state: &ReconState) -> Result<Self> {
        let motion = (0..state.z.frames())
            .map(|t| state.motion_at(t, state.f.dims()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            template: state.f.clone(),
            motion,
            latents: state.z.clone(),
        })
    }
}

/// Magnitudes scaled to unit maximum.
fn unit_magnitude(img: &ComplexImage) -> Vec<f64> {
    let mag = img.magnitude();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        mag.iter().map(|v| v / peak).collect()
    } else {
        mag
    }
}

fn overlap_mse(a: &[f64], b: &[f64], rows: usize, cols: usize, dr: i64, dc: i64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..rows as i64 {
        let rb = r + dr;
        if rb < 0 || rb >= rows as i64 {
            continue;
        }
        for c in 0..cols as i64 {
            let cb = c + dc;
            if cb < 0 || cb >= cols as i64 {
                continue;
            }
            let d = a[(r as usize) * cols + c as usize] - b[(rb as usize) * cols + cb as usize];
            sum += d * d;
            n += 1;
        }
    }
    sum / n as f64
}

/// PSNR (dB) of `|a|` against `|b|`, both scaled to unit maximum, at the
/// integer translation within `±MAX_SHIFT` that minimises the error over
/// the overlap. Capped at [`PSNR_CAP`].
pub fn psnr(a: &ComplexImage, b: &ComplexImage) -> Result<f64> {
    a.check_same_dims(b, "psnr")?;
    let (rows, cols) = a.dims();
    let (ua, ub) = (unit_magnitude(a), unit_magnitude(b));
    let mut best = f64::INFINITY;
    for dr in -MAX_SHIFT..=MAX_SHIFT {
        for dc in -MAX_SHIFT..=MAX_SHIFT {
            best = best.min(overlap_mse(&ua, &ub, rows, cols, dr, dc));
        }
    }
    Ok(if best <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * best.log10()).min(PSNR_CAP)
    })
}

fn motion_as_complex(phi: &MotionField) -> ComplexImage {
    let (d0, d1) = (phi.component(0), phi.component(1));
    ComplexImage::from_vec(
        phi.rows(),
        phi.cols(),
        d0.iter().zip(d1).map(|(&a, &b)| Complex64::new(a, b)).collect(),
    )
    .expect("component sizes agree")
}

/// `ψ` with `D(D(f, φ_ref), ψ) = D(f, φ)`, i.e. `ψ(x) + φ_ref(x − ψ(x)) = φ(x)`,
/// solved by fixed-point iteration.
pub fn relative_motion(phi: &MotionField, phi_ref: &MotionField) -> Result<MotionField> {
    if phi.dims() != phi_ref.dims() {
        return Err(mismatch("motion fields differ in size"));
    }
    let reference = motion_as_complex(phi_ref);
    let (rows, cols) = phi.dims();
    let mut psi = phi.clone();
    for _ in 0..COMPOSE_ITERATIONS {
        let shifted = warp_forward(&reference, &psi)?;
        let mut next = phi.clone();
        let n = rows * cols;
        for (i, s) in shifted.data().iter().enumerate() {
            next.data_mut()[i] -= s.re;
            next.data_mut()[n + i] -= s.im;
        }
        let change = next
            .data()
            .iter()
            .zip(psi.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        psi = next;
        if change < 1e-12 {
            break;
        }
    }
    Ok(psi)
}

/// Mean endpoint error over `mask`.
pub fn endpoint_error(est: &MotionField, truth: &MotionField, mask: &[bool]) -> Result<f64> {
    if est.dims() != truth.dims() || mask.len() != est.rows() * est.cols() {
        return Err(mismatch("endpoint error inputs differ in size"));
    }
    let n = mask.len();
    let (e, t) = (est.data(), truth.data());
    let (mut sum, mut count) = (0.0, 0usize);
    for i in (0..n).filter(|&i| mask[i]) {
        sum += (e[i] - t[i]).hypot(e[n + i] - t[n + i]);
        count += 1;
    }
    if count == 0 {
        return Err(invalid("empty endpoint-error mask"));
    }
    Ok(sum / count as f64)
}

/// Pearson correlation; zero when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Largest `|r|` between any latent coordinate and `signal`.
pub fn latent_correlation(latents: &LatentTrajectory, signal: &[f64]) -> f64 {
    (0..latents.dim())
        .map(|k| pearson(&latents.trace(k), signal).abs())
        .fold(0.0, f64::max)
}

/// Period (in samples) at the peak of the mean-removed spectrum, searched
/// on a fine frequency grid between one cycle per record and Nyquist.
pub fn dominant_period(series: &[f64]) -> Option<f64> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let steps = 64 * n;
    let (lo, hi) = (1.0 / n as f64, 0.5);
    let mut best = (0.0, 0.0);
    for s in 0..=steps {
        let freq = lo + (hi - lo) * s as f64 / steps as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in series.iter().enumerate() {
            let w = 2.0 * PI * freq * t as f64;
            re += (v - mean) * w.cos();
            im -= (v - mean) * w.sin();
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (freq, power);
        }
    }
    (best.1 > 0.0).then(|| 1.0 / best.0)
}

/// Dominant period over the latent coordinate best correlated with `signal`.
fn latent_period(latents: &LatentTrajectory, signal: &[f64]) -> Option<f64> {
    let k = (0..latents.dim())
        .max_by(|&a, &b| {
            let ca = pearson(&latents.trace(a), signal).abs();
            let cb = pearson(&latents.trace(b), signal).abs();
            ca.total_cmp(&cb)
        })
        .unwrap_or(0);
    dominant_period(&latents.trace(k))
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// Compares an estimate with the truth. `runtime` is passed through.
pub fn compute_metrics(est: &Estimate, truth: &GroundTruth, runtime: f64) -> Result<Metrics> {
    let m = truth.respiratory_signal.len();
    if m == 0 || truth.motion.len() != m {
        return Err(invalid("ground truth lacks motion or respiratory signal"));
    }
    if est.motion.len() != m || est.latents.frames() != m {
        return Err(mismatch(format!(
            "estimate has {} motion fields and {} latents for {m} frames",
            est.motion.len(),
            est.latents.frames()
        )));
    }
    est.template.check_same_dims(&truth.template, "template")?;
    let signal = &truth.respiratory_signal;
    let (t_ref, t_peak) = (argmin(signal), argmax(signal));

    let est_ref = &est.motion[t_ref];
    let est_template = warp_forward(&est.template, est_ref)?;
    let true_template = warp_forward(&truth.template, &truth.motion[t_ref])?;
    let psnr_template = psnr(&est_template, &true_template)?;

    let est_peak = relative_motion(&est.motion[t_peak], est_ref)?;
    let true_peak = relative_motion(&truth.motion[t_peak], &truth.motion[t_ref])?;
    let mask = lung_mask(truth.template.rows());
    let motion_epe = endpoint_error(&est_peak, &true_peak, &mask)?;

    let latent_corr = latent_correlation(&est.latents, signal);
    let period_error = match (latent_period(&est.latents, signal), dominant_period(signal)) {
        (Some(p), Some(q)) => (p - q).abs() / q,
        _ => f64::INFINITY,
    };
    Ok(Metrics {
        psnr_template,
        motion_epe,
        latent_corr,
        period_error,
        runtime,
    })
}

/// Best PSNR of any phase image against any ground-truth frame
/// `D(f_gt, φ_gt(t))`.
pub fn best_phase_psnr(phases: &[ComplexImage], truth: &GroundTruth) -> Result<f64> {
    if phases.is_empty() {
        return Err(invalid("no phase images"));
    }
    let frames = truth
        .motion
        .iter()
        .map(|phi| warp_forward(&truth.template, phi))
        .collect::<Result<Vec<_>>>()?;
    let mut best = f64::NEG_INFINITY;
    for phase in phases {
        for frame in &frames {
            best = best.max(psnr(phase, frame)?);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_ground_truth, PhantomSpec};

    fn spec() -> PhantomSpec {
        PhantomSpec {
            grid_size: 32,
            num_frames: 20,
            spokes_per_frame: 4,
            samples_per_spoke: 32,
            num_coils: 2,
            breathing_period: 10.0,
            breathing_amplitude: 3.0,
            noise_sigma: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let truth = make_ground_truth(&spec()).unwrap();
        assert_eq!(psnr(&truth.template, &truth.template).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_matches_hand_value_and_is_symmetric() {
        let a = ComplexImage::from_real(16, 16, &[1.0; 256]).unwrap();
        let mut b = a.clone();
        b.set(8, 8, Complex64::new(0.5, 0.0));
        // Every searched shift keeps the centre pixel; zero shift has the
        // largest overlap, so MSE = 0.25 / 256.
        let p = psnr(&a, &b).unwrap();
        assert!((p - 10.0 * 1024f64.log10()).abs() < 1e-12, "{p}");
        assert_eq!(p, psnr(&b, &a).unwrap());
    }

    #[test]
    fn global_translation_is_registered() {
        let truth = make_ground_truth(&spec()).unwrap();
        let shifted = warp_forward(&truth.template, &MotionField::constant(32, 32, 2.0, -1.0)).unwrap();
        let unregistered = -10.0
            * (unit_magnitude(&shifted)
                .iter()
                .zip(unit_magnitude(&truth.template))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / 1024.0)
                .log10();
        assert!(psnr(&shifted, &truth.template).unwrap() > unregistered + 10.0);
    }

    #[test]
    fn constant_offset_gives_unit_endpoint_error() {
        let truth = make_ground_truth(&spec()).unwrap();
        let mut est = truth.motion[5].clone();
        let n = 32 * 32;
        for v in &mut est.data_mut()[..n] {
            *v += 0.6;
        }
        for v in &mut est.data_mut()[n..] {
            *v -= 0.8;
        }
        let mask = lung_mask(32);
        let epe = endpoint_error(&est, &truth.motion[5], &mask).unwrap();
        assert!((epe - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_is_sign_invariant_and_guarded() {
        let signal: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let flipped = LatentTrajectory::from_vec(20, 1, signal.iter().map(|v| -v).collect()).unwrap();
        assert!((latent_correlation(&flipped, &signal) - 1.0).abs() < 1e-12);
        let constant = LatentTrajectory::zeros(20, 1);
        assert_eq!(latent_correlation(&constant, &signal), 0.0);
    }

    #[test]
    fn period_of_sampled_cosine() {
        for &p in &[10.0, 7.3, 12.5] {
            let s: Vec<f64> = (0..40).map(|t| (2.0 * PI * t as f64 / p).cos()).collect();
            let est = dominant_period(&s).unwrap();
            assert!((est - p).abs() / p < 0.02, "{p} -> {est}");
        }
        assert!(dominant_period(&[1.0; 10]).is_none());
    }

    #[test]
    fn relative_motion_of_linear_reference() {
        // φ_ref = 0.1 (r − 16) along rows, φ = 0: ψ + 0.1 (r − ψ − 16) = 0.
        let n = 32;
        let mut phi_ref = MotionField::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                phi_ref.set(r, c, [0.1 * (r as f64 - 16.0), 0.0]);
            }
        }
        let psi = relative_motion(&MotionField::zeros(n, n), &phi_ref).unwrap();
        for r in 4..n - 4 {
            for c in 0..n {
                let expected = -0.1 * (r as f64 - 16.0) / 0.9;
                let [p0, p1] = psi.at(r, c);
                assert!((p0 - expected).abs() < 1e-10, "{r}: {p0} vs {expected}");
                assert!(p1.abs() < 1e-12);
            }
        }
        let shift = MotionField::constant(n, n, 0.7, -0.2);
        let truth = make_ground_truth(&spec()).unwrap();
        let psi = relative_motion(&truth.motion[5], &shift).unwrap();
        for (i, (a, b)) in psi.data().iter().zip(truth.motion[5].data()).enumerate() {
            let c = if i < n * n { 0.7 } else { -0.2 };
            assert!((a - (b - c)).abs() < 1e-12);
        }
        assert_eq!(relative_motion(&truth.motion[5], &MotionField::zeros(n, n)).unwrap(), truth.motion[5]);
    }

    #[test]
    fn truth_against_itself() {
        let truth = make_ground_truth(&spec()).unwrap();
        let m = compute_metrics(&Estimate::from_truth(&truth), &truth, 1.5).unwrap();
        assert!(m.psnr_template >= 99.0);
        assert!(m.motion_epe < 1e-12);
        assert!((m.latent_corr - 1.0).abs() < 1e-12);
        assert!(m.period_error < 1e-12);
        assert_eq!(m.runtime, 1.5);
    }

    #[test]
    fn missing_frames_rejected() {
        let truth = make_ground_truth(&spec()).unwrap();
        let mut est = Estimate::from_truth(&truth);
        est.motion.pop();
        assert!(compute_metrics(&est, &truth, 0.0).is_err());
    }
}
