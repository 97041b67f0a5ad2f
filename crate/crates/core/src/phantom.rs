//! Synthetic breathing acquisition with known ground truth.
//!
//! Geometry is defined in normalized coordinates `u = (col − N/2)/(N/2)`
//! (lateral) and `v = (row − N/2)/(N/2)` (superior–inferior, row 0 at the
//! top). Inhalation moves the diaphragm towards larger rows.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::image::{CMatrix, ComplexImage, MotionField};
use crate::nudft::{NudftOperator, SpokeFrame, Trajectory};
use crate::warp::warp_forward;

const TORSO_AXES: (f64, f64) = (0.86, 0.72);
const LUNG_CENTER: (f64, f64) = (0.40, -0.12);
const LUNG_AXES: (f64, f64) = (0.28, 0.40);
const TISSUE: f64 = 0.6;
const LUNG: f64 = 0.12;
const DIAPHRAGM: f64 = 1.0;
const VESSEL: f64 = 0.9;
const VESSEL_RADIUS: f64 = 0.05;
const VESSELS_PER_LUNG: usize = 3;
const SUPERSAMPLE: usize = 4;

/// Parameters of a synthetic acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid_size: usize,
    pub num_frames: usize,
    pub spokes_per_frame: usize,
    pub samples_per_spoke: usize,
    pub num_coils: usize,
    /// Breathing period in frames.
    pub breathing_period: f64,
    /// Peak displacement in pixels.
    pub breathing_amplitude: f64,
    /// Standard deviation of the complex k-space noise (`E|n|² = σ²`).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let g = self.grid_size;
        if g < 8 || !g.is_power_of_two() {
            return Err(invalid(format!("grid_size must be a power of two >= 8, got {g}")));
        }
        if self.num_frames < 2 {
            return Err(invalid(format!("num_frames must be >= 2, got {}", self.num_frames)));
        }
        if self.spokes_per_frame == 0 || self.samples_per_spoke == 0 {
            return Err(invalid("spokes_per_frame and samples_per_spoke must be >= 1"));
        }
        if self.num_coils == 0 {
            return Err(invalid("num_coils must be >= 1"));
        }
        if !(self.breathing_period > 0.0) {
            return Err(invalid("breathing_period must be positive"));
        }
        if !(self.breathing_amplitude >= 0.0 && self.breathing_amplitude < g as f64 / 4.0) {
            return Err(invalid(format!(
                "breathing_amplitude must lie in [0, grid_size/4), got {}",
                self.breathing_amplitude
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn total_spokes(&self) -> usize {
        self.num_frames * self.spokes_per_frame
    }
}

/// Everything the simulator knows that a reconstruction has to estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub template: ComplexImage,
    pub motion: Vec<MotionField>,
    pub respiratory_signal: Vec<f64>,
    pub coil_maps: Vec<ComplexImage>,
}

#[inline]
fn normalized(i: f64, n: usize) -> f64 {
    let half = (n / 2) as f64;
    (i - half) / half
}

fn inside_ellipse(u: f64, v: f64, center: (f64, f64), axes: (f64, f64)) -> bool {
    let a = (u - center.0) / axes.0;
    let b = (v - center.1) / axes.1;
    a * a + b * b <= 1.0
}

fn in_lung(u: f64, v: f64) -> bool {
    inside_ellipse(u, v, (LUNG_CENTER.0, LUNG_CENTER.1), LUNG_AXES)
        || inside_ellipse(u, v, (-LUNG_CENTER.0, LUNG_CENTER.1), LUNG_AXES)
}

/// Upper edge of the diaphragm band: a shallow dome.
fn diaphragm_top(u: f64) -> f64 {
    0.26 + 0.15 * u * u
}

fn vessel_centers(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e55_e150);
    let mut centers = Vec::new();
    for side in [-1.0, 1.0] {
        let cu = side * LUNG_CENTER.0;
        let mut placed = 0;
        while placed < VESSELS_PER_LUNG {
            // stay well inside the lung and clear of each other
            let a = rng.random_range(-0.6..0.6) * LUNG_AXES.0;
            let b = rng.random_range(-0.6..0.5) * LUNG_AXES.1;
            let p = (cu + a, LUNG_CENTER.1 + b);
            if centers
                .iter()
                .all(|q: &(f64, f64)| (p.0 - q.0).hypot(p.1 - q.1) > 4.0 * VESSEL_RADIUS)
            {
                centers.push(p);
                placed += 1;
            }
        }
    }
    centers
}

fn phantom_value(u: f64, v: f64, vessels: &[(f64, f64)]) -> f64 {
    if !inside_ellipse(u, v, (0.0, 0.0), TORSO_AXES) {
        return 0.0;
    }
    if vessels
        .iter()
        .any(|&(a, b)| (u - a).hypot(v - b) <= VESSEL_RADIUS)
    {
        return VESSEL;
    }
    if in_lung(u, v) {
        return LUNG;
    }
    let top = diaphragm_top(u);
    if v >= top && v <= top + 0.1 && u.abs() < 0.75 {
        return DIAPHRAGM;
    }
    TISSUE
}

/// Static anatomy: torso, two lungs with vessels and a diaphragm band,
/// rendered with 4×4 supersampling.
pub fn make_template(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let n = spec.grid_size;
    let vessels = vessel_centers(spec.seed);
    let s = SUPERSAMPLE as f64;
    Ok(ComplexImage::from_fn(n, n, |r, c| {
        let mut acc = 0.0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let rr = r as f64 + (i as f64 + 0.5) / s - 0.5;
                let cc = c as f64 + (j as f64 + 0.5) / s - 0.5;
                acc += phantom_value(normalized(cc, n), normalized(rr, n), &vessels);
            }
        }
        Complex64::new(acc / (s * s), 0.0)
    }))
}

/// Lung region of interest (both lung ellipses, vessels included).
pub fn lung_mask(grid_size: usize) -> Vec<bool> {
    let n = grid_size;
    (0..n * n)
        .map(|i| in_lung(normalized((i % n) as f64, n), normalized((i / n) as f64, n)))
        .collect()
}

/// Scalar breathing waveform `A (1 − cos(2πt/P)) / 2`.
pub fn respiratory_waveform(spec: &PhantomSpec, t: f64) -> f64 {
    spec.breathing_amplitude * (1.0 - (2.0 * PI * t / spec.breathing_period).cos()) / 2.0
}

/// Unnormalized spatial motion basis at normalized position `(u, v)`:
/// `[superior–inferior, lateral]`.
fn raw_basis(u: f64, v: f64) -> [f64; 2] {
    let rho2 = (u / TORSO_AXES.0).powi(2) + (v / TORSO_AXES.1).powi(2);
    if rho2 >= 1.0 {
        return [0.0, 0.0];
    }
    let taper = 1.0 - rho2;
    let profile = (-(v - 0.30).powi(2) / (2.0 * 0.35 * 0.35)).exp();
    let si = taper * profile;
    [si, 0.15 * u * si]
}

/// Motion basis on the grid, scaled so its largest vector has length 1.
pub fn motion_basis(grid_size: usize) -> MotionField {
    let n = grid_size;
    let mut field = MotionField::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            field.set(r, c, raw_basis(normalized(c as f64, n), normalized(r as f64, n)));
        }
    }
    let peak = field.max_magnitude();
    if peak > 0.0 {
        field.data_mut().iter_mut().for_each(|v| *v /= peak);
    }
    field
}

/// Ground-truth displacement for frame `t`.
pub fn make_motion(spec: &PhantomSpec, t: usize) -> Result<MotionField> {
    spec.validate()?;
    if t >= spec.num_frames {
        return Err(invalid(format!(
            "frame {t} out of range for {} frames",
            spec.num_frames
        )));
    }
    let r = respiratory_waveform(spec, t as f64);
    let mut field = motion_basis(spec.grid_size);
    field.data_mut().iter_mut().for_each(|v| *v *= r);
    Ok(field)
}

/// Gaussian-weighted coil sensitivities with linear phase, normalized to
/// unit root-sum-of-squares at the grid center.
pub fn make_coil_maps(spec: &PhantomSpec) -> Result<Vec<ComplexImage>> {
    spec.validate()?;
    let n = spec.grid_size;
    let count = spec.num_coils;
    let sigma: f64 = 0.7;
    // keeps every normalized map at or below unit magnitude
    let radius = 0.9 * sigma * (count as f64).ln().sqrt();
    let maps: Vec<ComplexImage> = (0..count)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / count as f64;
            let (sa, ca) = angle.sin_cos();
            let (cu, cv) = (radius * ca, radius * sa);
            ComplexImage::from_fn(n, n, |r, col| {
                let u = normalized(col as f64, n);
                let v = normalized(r as f64, n);
                let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                let phase = angle + 0.3 * PI * (u * ca + v * sa);
                Complex64::from_polar(mag, phase)
            })
        })
        .collect();
    let center = n / 2;
    let rss = maps
        .iter()
        .map(|m| m.get(center, center).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(maps
        .into_iter()
        .map(|mut m| {
            m.data_mut().iter_mut().for_each(|v| *v /= rss);
            m
        })
        .collect())
}

pub fn make_ground_truth(spec: &PhantomSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let template = make_template(spec)?;
    let motion = (0..spec.num_frames)
        .map(|t| make_motion(spec, t))
        .collect::<Result<Vec<_>>>()?;
    let respiratory_signal = (0..spec.num_frames)
        .map(|t| respiratory_waveform(spec, t as f64))
        .collect();
    let coil_maps = make_coil_maps(spec)?;
    Ok(GroundTruth {
        template,
        motion,
        respiratory_signal,
        coil_maps,
    })
}

/// Noiseless multicoil samples of every frame.
fn clean_samples(gt: &GroundTruth, trajectory: &Trajectory) -> Result<Vec<CMatrix>> {
    let (rows, cols) = gt.template.dims();
    gt.motion
        .iter()
        .zip(&trajectory.frames)
        .map(|(phi, coords)| {
            let frame = warp_forward(&gt.template, phi)?;
            NudftOperator::new(rows, cols, coords).forward(&frame, &gt.coil_maps)
        })
        .collect()
}

fn check_simulation_inputs(spec: &PhantomSpec, gt: &GroundTruth, trajectory: &Trajectory) -> Result<()> {
    spec.validate()?;
    let n = spec.grid_size;
    if trajectory.num_frames() != spec.num_frames || gt.motion.len() != spec.num_frames {
        return Err(mismatch(format!(
            "expected {} frames, trajectory has {} and ground truth {}",
            spec.num_frames,
            trajectory.num_frames(),
            gt.motion.len()
        )));
    }
    if gt.template.dims() != (n, n) {
        return Err(mismatch("template grid differs from spec grid_size"));
    }
    if let Some(m) = gt.motion.iter().find(|m| m.dims() != (n, n)) {
        return Err(mismatch(format!("motion field is {}x{}, expected {n}x{n}", m.rows(), m.cols())));
    }
    if gt.coil_maps.iter().any(|m| m.dims() != (n, n)) {
        return Err(mismatch("coil map grid differs from spec grid_size"));
    }
    Ok(())
}

/// Warps the template per frame, applies the coil maps, samples the exact
/// NUDFT on the frame's spokes and adds circular complex Gaussian noise.
pub fn simulate_kspace(
    spec: &PhantomSpec,
    gt: &GroundTruth,
    trajectory: &Trajectory,
) -> Result<Vec<SpokeFrame>> {
    check_simulation_inputs(spec, gt, trajectory)?;
    let clean = clean_samples(gt, trajectory)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x006e_015e));
    let normal = Normal::new(0.0, spec.noise_sigma / 2f64.sqrt())
        .map_err(|e| invalid(format!("noise distribution: {e}")))?;
    Ok(clean
        .into_iter()
        .zip(&trajectory.frames)
        .enumerate()
        .map(|(t, (mut samples, coords))| {
            if spec.noise_sigma > 0.0 {
                for v in samples.data_mut() {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
            SpokeFrame {
                frame_index: t,
                coords: coords.clone(),
                samples,
            }
        })
        .collect())
}

/// Noise level giving the requested SNR (dB) relative to the RMS of the
/// noiseless samples.
pub fn noise_sigma_for_snr(
    spec: &PhantomSpec,
    gt: &GroundTruth,
    trajectory: &Trajectory,
    snr_db: f64,
) -> Result<f64> {
    check_simulation_inputs(spec, gt, trajectory)?;
    let clean = clean_samples(gt, trajectory)?;
    let (sum, count) = clean
        .iter()
        .fold((0.0, 0usize), |(s, n), m| (s + m.norm_sqr(), n + m.data().len()));
    Ok((sum / count as f64).sqrt() * 10f64.powf(-snr_db / 20.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nudft::{make_trajectory, Ordering};

    pub(crate) fn small_spec() -> PhantomSpec {
        PhantomSpec {
            grid_size: 64,
            num_frames: 10,
            spokes_per_frame: 2,
            samples_per_spoke: 16,
            num_coils: 4,
            breathing_period: 10.0,
            breathing_amplitude: 5.0,
            noise_sigma: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec();
        s.grid_size = 48;
        assert!(make_template(&s).is_err());
        let mut s = small_spec();
        s.breathing_amplitude = 16.0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.num_frames = 1;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.noise_sigma = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn template_range_and_structure() {
        let spec = small_spec();
        let f = make_template(&spec).unwrap();
        let max = f.data().iter().map(|v| v.re).fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        assert!(f.data().iter().all(|v| v.im == 0.0 && v.re >= 0.0 && v.re <= 1.0));
        // corners lie outside the torso
        assert_eq!(f.get(0, 0).re, 0.0);
        assert_eq!(f.get(63, 63).re, 0.0);
        // lung interior is dark, the torso wall is tissue
        let mask = lung_mask(64);
        let dark = (0..64 * 64).filter(|&i| mask[i] && (f.data()[i].re - LUNG).abs() < 1e-12).count();
        assert!(dark * 10 > mask.iter().filter(|&&m| m).count() * 7);
        assert!((f.get(32, 32 + 26).re - TISSUE).abs() < 1e-12);
        assert_eq!(vessel_centers(spec.seed).len(), 6);
        assert_eq!(f, make_template(&spec).unwrap());
    }

    #[test]
    fn vessels_lie_inside_lungs() {
        for seed in 0..20 {
            for (u, v) in vessel_centers(seed) {
                assert!(in_lung(u, v));
            }
        }
    }

    #[test]
    fn motion_waveform_endpoints() {
        let spec = small_spec();
        let m0 = make_motion(&spec, 0).unwrap();
        assert!(m0.data().iter().all(|&v| v == 0.0));
        let peak = make_motion(&spec, 5).unwrap();
        assert!((peak.max_magnitude() - spec.breathing_amplitude).abs() < 1e-12);
        assert!(make_motion(&spec, 10).is_err());
        assert_eq!(respiratory_waveform(&spec, 5.0), spec.breathing_amplitude);
    }

    #[test]
    fn motion_is_smooth_and_mostly_vertical() {
        let spec = small_spec();
        let m = make_motion(&spec, 5).unwrap();
        let n = spec.grid_size;
        let mut max_step: f64 = 0.0;
        for axis in 0..2 {
            let d = m.component(axis);
            for r in 0..n {
                for c in 0..n {
                    if c + 1 < n {
                        max_step = max_step.max((d[r * n + c + 1] - d[r * n + c]).abs());
                    }
                    if r + 1 < n {
                        max_step = max_step.max((d[(r + 1) * n + c] - d[r * n + c]).abs());
                    }
                }
            }
        }
        assert!(max_step <= spec.breathing_amplitude / 4.0, "max step {max_step}");
        let si: f64 = m.component(0).iter().map(|v| v.abs()).sum();
        let lr: f64 = m.component(1).iter().map(|v| v.abs()).sum();
        assert!(si > 5.0 * lr);
    }

    #[test]
    fn mean_lung_displacement_matches_direct_evaluation() {
        let spec = small_spec();
        let n = spec.grid_size;
        let m = make_motion(&spec, 5).unwrap();
        let mask = lung_mask(n);
        // independent evaluation of the basis formula
        let mut peak: f64 = 0.0;
        let mut values = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let u = (c as f64 - 32.0) / 32.0;
                let v = (r as f64 - 32.0) / 32.0;
                let rho2 = (u / 0.86).powi(2) + (v / 0.72).powi(2);
                let si = if rho2 < 1.0 {
                    (1.0 - rho2) * (-(v - 0.3).powi(2) / 0.245).exp()
                } else {
                    0.0
                };
                let len = si * (1.0 + 0.0225 * u * u).sqrt();
                peak = peak.max(len);
                values.push(len);
            }
        }
        let expected: f64 = values
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| 5.0 * v / peak)
            .sum::<f64>()
            / mask.iter().filter(|&&m| m).count() as f64;
        let got: f64 = (0..n * n)
            .filter(|&i| mask[i])
            .map(|i| m.component(0)[i].hypot(m.component(1)[i]))
            .sum::<f64>()
            / mask.iter().filter(|&&m| m).count() as f64;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got > 1.0 && got < 5.0);
    }

    #[test]
    fn coil_maps_normalized_and_bounded() {
        for coils in [1usize, 2, 4, 8] {
            let mut spec = small_spec();
            spec.num_coils = coils;
            let maps = make_coil_maps(&spec).unwrap();
            assert_eq!(maps.len(), coils);
            let rss: f64 = maps.iter().map(|m| m.get(32, 32).norm_sqr()).sum::<f64>().sqrt();
            assert!((rss - 1.0).abs() < 1e-12);
            assert!(maps.iter().all(|m| m.data().iter().all(|v| v.norm() <= 1.0 + 1e-12)));
            let template = make_template(&spec).unwrap();
            for i in 0..64 * 64 {
                if template.data()[i].re > 0.0 {
                    let ss: f64 = maps.iter().map(|m| m.data()[i].norm_sqr()).sum();
                    assert!(ss >= 0.1, "coils={coils} pixel {i}: {ss}");
                }
            }
            assert_eq!(maps, make_coil_maps(&spec).unwrap());
        }
        let mut spec = small_spec();
        spec.num_coils = 1;
        let maps = make_coil_maps(&spec).unwrap();
        assert!((maps[0].get(32, 32).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dc_sample_of_static_single_coil_data() {
        let mut spec = small_spec();
        spec.num_coils = 1;
        spec.breathing_amplitude = 0.0;
        let mut gt = make_ground_truth(&spec).unwrap();
        gt.coil_maps = vec![ComplexImage::from_fn(64, 64, |_, _| Complex64::new(1.0, 0.0))];
        let traj = make_trajectory(20, 16, 2, Ordering::GoldenAngle).unwrap();
        let frames = simulate_kspace(&spec, &gt, &traj).unwrap();
        let dc_index = 8; // radial position (8 − 8)/16 = 0 on the first spoke
        assert_eq!(frames[0].coords[dc_index], [0.0, 0.0]);
        let sum: Complex64 = gt.template.data().iter().sum();
        assert!((frames[3].samples.get(0, dc_index) - sum).norm() < 1e-9);
    }

    #[test]
    fn simulation_composes_warp_coils_and_nudft() {
        let spec = small_spec();
        let gt = make_ground_truth(&spec).unwrap();
        let traj = make_trajectory(20, 16, 2, Ordering::GoldenAngle).unwrap();
        let frames = simulate_kspace(&spec, &gt, &traj).unwrap();
        assert_eq!(frames, simulate_kspace(&spec, &gt, &traj).unwrap());
        for t in [0usize, 4, 7] {
            let warped = warp_forward(&gt.template, &gt.motion[t]).unwrap();
            let expected =
                crate::nudft::nudft_forward(&warped, &gt.coil_maps, &traj.frames[t]).unwrap();
            for (a, b) in expected.data().iter().zip(frames[t].samples.data()) {
                assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn brute_force_samples_on_tiny_grid() {
        let spec = PhantomSpec {
            grid_size: 8,
            num_frames: 2,
            spokes_per_frame: 1,
            samples_per_spoke: 8,
            num_coils: 1,
            breathing_period: 4.0,
            breathing_amplitude: 1.0,
            noise_sigma: 0.0,
            seed: 1,
        };
        let mut gt = make_ground_truth(&spec).unwrap();
        gt.template = ComplexImage::from_fn(8, 8, |r, c| Complex64::new((r * 8 + c) as f64 / 64.0, 0.0));
        gt.coil_maps = vec![ComplexImage::from_fn(8, 8, |_, _| Complex64::new(1.0, 0.0))];
        gt.motion = vec![MotionField::zeros(8, 8); 2];
        let traj = make_trajectory(2, 8, 1, Ordering::Uniform).unwrap();
        let frames = simulate_kspace(&spec, &gt, &traj).unwrap();
        for (p, k) in traj.frames[1].iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..8 {
                for c in 0..8 {
                    let ph = -2.0 * PI * (k[0] * (c as f64 - 4.0) + k[1] * (r as f64 - 4.0));
                    acc += gt.template.get(r, c) * Complex64::from_polar(1.0, ph);
                }
            }
            assert!((frames[1].samples.get(0, p) - acc).norm() < 1e-12 * acc.norm().max(1.0));
        }
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let mut spec = small_spec();
        let gt = make_ground_truth(&spec).unwrap();
        let traj = make_trajectory(20, 16, 2, Ordering::GoldenAngle).unwrap();
        let clean = simulate_kspace(&spec, &gt, &traj).unwrap();
        spec.noise_sigma = 2.0;
        let noisy = simulate_kspace(&spec, &gt, &traj).unwrap();
        assert_eq!(noisy, simulate_kspace(&spec, &gt, &traj).unwrap());
        let (mut power, mut count) = (0.0, 0usize);
        for (a, b) in clean.iter().zip(&noisy) {
            for (x, y) in a.samples.data().iter().zip(b.samples.data()) {
                power += (x - y).norm_sqr();
                count += 1;
            }
        }
        let sigma = (power / count as f64).sqrt();
        assert!((sigma - 2.0).abs() < 0.1, "empirical sigma {sigma}");
        let target = noise_sigma_for_snr(&spec, &gt, &traj, 20.0).unwrap();
        assert!(target > 0.0);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let spec = small_spec();
        let gt = make_ground_truth(&spec).unwrap();
        let traj = make_trajectory(18, 16, 2, Ordering::GoldenAngle).unwrap();
        assert!(simulate_kspace(&spec, &gt, &traj).is_err());
        let traj = make_trajectory(20, 16, 2, Ordering::GoldenAngle).unwrap();
        let mut bad = gt.clone();
        bad.template = ComplexImage::zeros(32, 32);
        assert!(simulate_kspace(&spec, &bad, &traj).is_err());
    }
}
