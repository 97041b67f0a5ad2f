//! Motion-resolved reference reconstruction: self-gating from the k-space
//! centre, amplitude binning of spokes, and an independent TV-regularised
//! reconstruction per respiratory phase.

use log::debug;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Dataset;
use crate::error::{invalid, Error, Result};
use crate::image::{CMatrix, ComplexImage};
use crate::metrics::{dominant_period, pearson};
use crate::nudft::{KPoint, NudftOperator, ToeplitzNormal};

/// Smoothing constant inside the TV square root.
pub const TV_EPSILON: f64 = 1e-6;
/// Consecutive objective increases tolerated before giving up.
pub const DIVERGENCE_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub num_phases: usize,
    pub tv_weight: f64,
    pub max_iters: usize,
    /// Relative objective change below which iterations stop.
    pub tolerance: f64,
    pub power_iters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            num_phases: 4,
            tv_weight: 300.0,
            max_iters: 200,
            tolerance: 1e-7,
            power_iters: 30,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_phases < 2 {
            return Err(invalid("num_phases must be >= 2"));
        }
        if !(self.tv_weight >= 0.0) {
            return Err(invalid("tv_weight must be >= 0"));
        }
        if self.max_iters == 0 || self.power_iters == 0 {
            return Err(invalid("iteration counts must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingSignal {
    /// One value per spoke in acquisition order.
    pub values: Vec<f64>,
    /// Moving-average cutoff, cycles per spoke (reciprocal of the window).
    pub filter_cutoff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBin {
    pub phase_index: usize,
    pub spoke_indices: Vec<usize>,
    pub recon: Option<ComplexImage>,
}

/// Coordinates and samples of one spoke.
fn spoke(dataset: &Dataset, s: usize) -> (&[KPoint], usize, usize) {
    let spf = dataset.spokes_per_frame;
    let sps = dataset.samples_per_spoke;
    let frame = &dataset.frames[s / spf];
    let start = (s % spf) * sps;
    (&frame.coords[start..start + sps], s / spf, start)
}

fn z_score(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Rounding in the mean leaves a tiny variance for constant input.
    if !(var > (1e-12 * scale).powi(2)) {
        return vec![0.0; series.len()];
    }
    let sd = var.sqrt();
    series.iter().map(|v| (v - mean) / sd).collect()
}

/// Centered moving average; near the ends the window shrinks
/// symmetrically so the filter stays zero-phase.
fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let n = series.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let seg = &series[i - h..=i + h];
            seg.iter().sum::<f64>() / seg.len() as f64
        })
        .collect()
}

/// Largest group of coils whose z-scored series are pairwise positively
/// correlated once each is sign-aligned to a reference coil. Returns the
/// group (reference first) and a sign per coil.
fn select_coils(series: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let coils = series.len();
    let corr: Vec<Vec<f64>> = (0..coils)
        .map(|a| (0..coils).map(|b| pearson(&series[a], &series[b])).collect())
        .collect();
    // Reference coil: strongest total coupling to the others.
    let reference = (0..coils)
        .max_by(|&a, &b| {
            let sa: f64 = corr[a].iter().map(|v| v.abs()).sum();
            let sb: f64 = corr[b].iter().map(|v| v.abs()).sum();
            sa.total_cmp(&sb).then(b.cmp(&a))
        })
        .expect("at least one coil");
    let sign: Vec<f64> = (0..coils)
        .map(|c| if corr[reference][c] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut candidates: Vec<usize> = (0..coils).filter(|&c| c != reference).collect();
    candidates.sort_by(|&a, &b| corr[reference][b].abs().total_cmp(&corr[reference][a].abs()));
    let mut group = vec![reference];
    for c in candidates {
        if group.iter().all(|&g| sign[g] * sign[c] * corr[g][c] > 0.0) {
            group.push(c);
        }
    }
    (group, sign)
}

/// Respiratory surrogate from the centre sample of every spoke.
pub fn extract_gating(dataset: &Dataset) -> Result<GatingSignal> {
    dataset.validate()?;
    let coils = dataset.coil_maps.len();
    let spokes = dataset.total_spokes();
    let limit = 1.0 / dataset.samples_per_spoke as f64;
    let mut series = vec![Vec::with_capacity(spokes); coils];
    for s in 0..spokes {
        let (coords, t, start) = spoke(dataset, s);
        let (j, dist) = coords
            .iter()
            .enumerate()
            .map(|(j, k)| (j, k[0].hypot(k[1])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("spokes are non-empty");
        if dist > limit {
            return Err(invalid(format!(
                "spoke {s} has no sample within {limit} of the k-space centre"
            )));
        }
        let samples = &dataset.frames[t].samples;
        for (c, out) in series.iter_mut().enumerate() {
            out.push(samples.get(c, start + j).norm());
        }
    }
    let series: Vec<Vec<f64>> = series.iter().map(|s| z_score(s)).collect();

    let (group, sign) = select_coils(&series);
    debug!("gating uses coils {group:?}");

    let mut mean = vec![0.0; spokes];
    for &c in &group {
        for (m, v) in mean.iter_mut().zip(&series[c]) {
            *m += sign[c] * v / group.len() as f64;
        }
    }
    let window = match dominant_period(&mean) {
        Some(p) => ((p / 8.0).round() as usize).max(1),
        None => 1,
    };
    let window = window | 1;
    Ok(GatingSignal {
        values: moving_average(&mean, window),
        filter_cutoff: 1.0 / window as f64,
    })
}

/// Equal-count amplitude bins; ties are ordered by spoke index.
pub fn bin_spokes(gating: &GatingSignal, num_phases: usize) -> Result<Vec<PhaseBin>> {
    let n = gating.values.len();
    if num_phases < 2 {
        return Err(invalid("num_phases must be >= 2"));
    }
    if num_phases > n {
        return Err(invalid(format!("{num_phases} phases for {n} spokes")));
    }
    if gating.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gating signal".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| gating.values[a].total_cmp(&gating.values[b]).then(a.cmp(&b)));
    Ok((0..num_phases)
        .map(|p| PhaseBin {
            phase_index: p,
            spoke_indices: order[p * n / num_phases..(p + 1) * n / num_phases].to_vec(),
            recon: None,
        })
        .collect())
}

/// Coordinates and samples of the spokes in a bin, concatenated.
pub fn gather_bin(dataset: &Dataset, spokes: &[usize]) -> (Vec<KPoint>, CMatrix) {
    let coils = dataset.coil_maps.len();
    let sps = dataset.samples_per_spoke;
    let mut coords = Vec::with_capacity(spokes.len() * sps);
    let mut samples = CMatrix::zeros(coils, spokes.len() * sps);
    for (i, &s) in spokes.iter().enumerate() {
        let (k, t, start) = spoke(dataset, s);
        coords.extend_from_slice(k);
        let frame = &dataset.frames[t].samples;
        for c in 0..coils {
            samples.row_mut(c)[i * sps..(i + 1) * sps]
                .copy_from_slice(&frame.row(c)[start..start + sps]);
        }
    }
    (coords, samples)
}

/// `Σ sqrt(|∇_r x|² + |∇_c x|² + ε)` with forward differences and zero
/// difference past the last row/column.
pub fn total_variation(x: &ComplexImage, eps: f64) -> f64 {
    tv_terms(x, eps, None)
}

fn tv_terms(x: &ComplexImage, eps: f64, mut grad: Option<&mut ComplexImage>) -> f64 {
    let (rows, cols) = x.dims();
    let d = x.data();
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let p = r * cols + c;
            let dr = if r + 1 < rows { d[p + cols] - d[p] } else { Complex64::new(0.0, 0.0) };
            let dc = if c + 1 < cols { d[p + 1] - d[p] } else { Complex64::new(0.0, 0.0) };
            let mag = (dr.norm_sqr() + dc.norm_sqr() + eps).sqrt();
            total += mag;
            if let Some(g) = grad.as_deref_mut() {
                let g = g.data_mut();
                let (wr, wc) = (dr / mag, dc / mag);
                g[p] -= wr + wc;
                if r + 1 < rows {
                    g[p + cols] += wr;
                }
                if c + 1 < cols {
                    g[p + 1] += wc;
                }
            }
        }
    }
    total
}

/// Gradient of [`total_variation`] (`∂/∂Re + i ∂/∂Im`).
pub fn total_variation_grad(x: &ComplexImage, eps: f64) -> ComplexImage {
    let mut g = ComplexImage::zeros(x.rows(), x.cols());
    tv_terms(x, eps, Some(&mut g));
    g
}

/// Largest eigenvalue of `AᴴA` by power iteration.
fn normal_norm(normal: &ToeplitzNormal, maps: &[ComplexImage], iters: usize) -> Result<f64> {
    let (rows, cols) = normal.dims();
    let mut x = ComplexImage::from_fn(rows, cols, |r, c| {
        Complex64::new(1.0 + 0.1 * ((r * 7 + c * 3) % 5) as f64, 0.05 * (r % 3) as f64)
    });
    let mut estimate = 0.0;
    for _ in 0..iters {
        let norm = x.norm_sqr().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x.data_mut().iter_mut().for_each(|v| *v /= norm);
        let y = normal.apply(&x, maps)?;
        estimate = x.inner(&y).re;
        x = y;
    }
    Ok(estimate)
}

/// Least-squares TV reconstruction of one bin by fixed-step gradient
/// descent, started from the ramp-weighted adjoint scaled to best fit the
/// data.
pub fn recon_phase(
    dataset: &Dataset,
    bin: &PhaseBin,
    config: &BaselineConfig,
) -> Result<ComplexImage> {
    recon_phase_traced(dataset, bin, config).map(|(x, _)| x)
}

/// [`recon_phase`] that also returns the objective after every iteration,
/// starting with the initial value.
pub fn recon_phase_traced(
    dataset: &Dataset,
    bin: &PhaseBin,
    config: &BaselineConfig,
) -> Result<(ComplexImage, Vec<f64>)> {
    config.validate()?;
    if bin.spoke_indices.is_empty() {
        return Err(invalid(format!("phase {} is empty", bin.phase_index)));
    }
    let (rows, cols) = (dataset.rows, dataset.cols);
    let maps = &dataset.coil_maps;
    let (coords, samples) = gather_bin(dataset, &bin.spoke_indices);
    let op = NudftOperator::new(rows, cols, &coords);
    let normal = ToeplitzNormal::new(rows, cols, &coords, None);
    let adjoint_b = op.adjoint(&samples, maps)?;
    let b_norm2 = samples.norm_sqr();
    if b_norm2 == 0.0 {
        return Ok((ComplexImage::zeros(rows, cols), vec![0.0]));
    }

    let floor = 0.5 / dataset.samples_per_spoke as f64;
    let mut weighted = samples.clone();
    for c in 0..weighted.rows() {
        for (v, k) in weighted.row_mut(c).iter_mut().zip(&coords) {
            *v *= k[0].hypot(k[1]).max(floor);
        }
    }
    let mut x = op.adjoint(&weighted, maps)?;
    let ax = op.forward(&x, maps)?;
    let denom = ax.norm_sqr();
    if denom > 0.0 {
        let scale = ax.inner(&samples).re / denom;
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
    }

    let lipschitz = 2.0 * normal_norm(&normal, maps, config.power_iters)? * 1.01;
    let step = 1.0 / lipschitz;
    let mu = config.tv_weight;
    let objective = |x: &ComplexImage, nx: &ComplexImage| {
        let data = (x.inner(nx).re - 2.0 * x.inner(&adjoint_b).re + b_norm2).max(0.0);
        data + mu * total_variation(x, TV_EPSILON)
    };

    let mut nx = normal.apply(&x, maps)?;
    let mut current = objective(&x, &nx);
    let mut trace = vec![current];
    let mut rises = 0;
    for iter in 0..config.max_iters {
        let mut grad = total_variation_grad(&x, TV_EPSILON);
        for ((g, n), ab) in grad.data_mut().iter_mut().zip(nx.data()).zip(adjoint_b.data()) {
            *g = *g * mu + (n - ab) * 2.0;
        }
        for (v, g) in x.data_mut().iter_mut().zip(grad.data()) {
            *v -= g * step;
        }
        nx = normal.apply(&x, maps)?;
        let next = objective(&x, &nx);
        if !next.is_finite() {
            return Err(Error::Diverged(format!(
                "phase {} objective became {next} at iteration {iter}",
                bin.phase_index
            )));
        }
        rises = if next > current { rises + 1 } else { 0 };
        if rises >= DIVERGENCE_WINDOW {
            return Err(Error::Diverged(format!(
                "phase {} objective rose for {DIVERGENCE_WINDOW} iterations (at {iter})",
                bin.phase_index
            )));
        }
        let change = (current - next).abs() / current.max(f64::MIN_POSITIVE);
        current = next;
        trace.push(next);
        if change < config.tolerance {
            debug!("phase {} converged after {} iterations", bin.phase_index, iter + 1);
            break;
        }
    }
    Ok((x, trace))
}

/// Gating, binning and per-phase reconstruction.
pub fn run_baseline(dataset: &Dataset, config: &BaselineConfig) -> Result<(GatingSignal, Vec<PhaseBin>)> {
    config.validate()?;
    let gating = extract_gating(dataset)?;
    let bins = bin_spokes(&gating, config.num_phases)?;
    let bins = bins
        .into_par_iter()
        .map(|mut bin| {
            bin.recon = Some(recon_phase(dataset, &bin, config)?);
            Ok(bin)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gating, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nudft::Ordering;
    use crate::phantom::PhantomSpec;
    use crate::simulation::simulate;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn spec(coils: usize, amplitude: f64) -> PhantomSpec {
        PhantomSpec {
            grid_size: 32,
            num_frames: 40,
            spokes_per_frame: 4,
            samples_per_spoke: 32,
            num_coils: coils,
            breathing_period: 10.0,
            breathing_amplitude: amplitude,
            noise_sigma: 0.0,
            seed: 21,
        }
    }

    fn per_spoke_truth(signal: &[f64], spokes_per_frame: usize) -> Vec<f64> {
        signal
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, spokes_per_frame))
            .collect()
    }

    #[test]
    fn single_coil_gating_tracks_breathing() {
        let sim = simulate(&spec(1, 4.0), Ordering::GoldenAngle, None).unwrap();
        let g = extract_gating(&sim.dataset).unwrap();
        assert_eq!(g.values.len(), 160);
        let truth = per_spoke_truth(&sim.truth.respiratory_signal, 4);
        let r = pearson(&g.values, &truth).abs();
        assert!(r >= 0.95, "|r| = {r}");
        // 40 spokes per cycle → window 5.
        assert!((g.filter_cutoff - 0.2).abs() < 1e-12);
    }

    #[test]
    fn motionless_data_gives_flat_gating() {
        let mut s = spec(2, 0.0);
        s.num_frames = 8;
        let sim = simulate(&s, Ordering::GoldenAngle, None).unwrap();
        let mut dataset = sim.dataset.clone();
        // Identical centre samples on every spoke.
        for frame in &mut dataset.frames {
            let first = frame.samples.get(0, 16);
            for v in frame.samples.row_mut(0) {
                *v = first;
            }
            for v in frame.samples.row_mut(1) {
                *v = first * 0.5;
            }
        }
        let g = extract_gating(&dataset).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_flipped_coil_is_kept() {
        let sim = simulate(&spec(1, 4.0), Ordering::GoldenAngle, None).unwrap();
        let single = extract_gating(&sim.dataset).unwrap();
        // Second coil whose centre magnitude is an affine, decreasing copy
        // of the first one: its z-scored series is exactly negated.
        let mut dataset = sim.dataset.clone();
        let peak = dataset
            .frames
            .iter()
            .flat_map(|f| f.samples.row(0).iter().map(|v| v.norm()))
            .fold(0.0, f64::max);
        dataset.coil_maps.push(dataset.coil_maps[0].clone());
        for frame in &mut dataset.frames {
            let first: Vec<Complex64> = frame.samples.row(0).to_vec();
            let flipped: Vec<Complex64> = first
                .iter()
                .map(|v| Complex64::new(2.0 * peak - v.norm(), 0.0))
                .collect();
            let data = [first, flipped].concat();
            frame.samples = CMatrix::from_vec(2, data.len() / 2, data).unwrap();
        }
        let pair = extract_gating(&dataset).unwrap();
        let truth = per_spoke_truth(&sim.truth.respiratory_signal, 4);
        let r_single = pearson(&single.values, &truth).abs();
        let r_pair = pearson(&pair.values, &truth).abs();
        assert!(r_pair >= r_single - 1e-12, "{r_pair} < {r_single}");
    }

    #[test]
    fn coil_selection_aligns_signs_and_keeps_a_consistent_group() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * PI / 8.0).sin()).collect();
        let y: Vec<f64> = (0..64).map(|i| (i as f64 * PI / 4.0).sin()).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        // Both positively correlated with x, negatively with each other.
        let plus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + 2.0 * b).collect();
        let minus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - 2.0 * b).collect();
        let (group, sign) = select_coils(&[x, flipped, plus, minus]);
        assert_eq!(group[0], 0);
        assert_eq!(group.len(), 3);
        assert!(group.contains(&1));
        assert!(group.contains(&2) != group.contains(&3));
        assert_eq!(sign[0] * sign[1], -1.0);
    }

    #[test]
    fn gating_is_scale_invariant() {
        let sim = simulate(&spec(2, 3.0), Ordering::GoldenAngle, None).unwrap();
        let mut scaled = sim.dataset.clone();
        for frame in &mut scaled.frames {
            frame.samples.data_mut().iter_mut().for_each(|v| *v *= 1024.0);
        }
        let a = extract_gating(&sim.dataset).unwrap();
        let b = extract_gating(&scaled).unwrap();
        assert_eq!(a.filter_cutoff, b.filter_cutoff);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spoke_without_centre_sample_rejected() {
        let sim = simulate(&spec(1, 1.0), Ordering::GoldenAngle, None).unwrap();
        let mut dataset = sim.dataset.clone();
        for k in &mut dataset.frames[3].coords[32..64] {
            if k[0].hypot(k[1]) < 0.1 {
                *k = [0.3, 0.3];
            }
        }
        assert!(extract_gating(&dataset).is_err());
    }

    #[test]
    fn two_phases_split_sorted_spokes_in_half() {
        let g = GatingSignal {
            values: (0..10).map(|i| i as f64).collect(),
            filter_cutoff: 1.0,
        };
        let bins = bin_spokes(&g, 2).unwrap();
        assert_eq!(bins[0].spoke_indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(bins[1].spoke_indices, vec![5, 6, 7, 8, 9]);
        let ties = GatingSignal {
            values: vec![1.0, 0.0, 1.0, 0.0],
            filter_cutoff: 1.0,
        };
        let bins = bin_spokes(&ties, 2).unwrap();
        assert_eq!(bins[0].spoke_indices, vec![1, 3]);
        assert_eq!(bins[1].spoke_indices, vec![0, 2]);
        assert!(bin_spokes(&g, 11).is_err());
        assert!(bin_spokes(&g, 1).is_err());
    }

    proptest! {
        #[test]
        fn bins_partition_spokes(values in proptest::collection::vec(-3.0f64..3.0, 2..200), phases in 2usize..9) {
            prop_assume!(phases <= values.len());
            let g = GatingSignal { values: values.clone(), filter_cutoff: 1.0 };
            let bins = bin_spokes(&g, phases).unwrap();
            let sizes: Vec<usize> = bins.iter().map(|b| b.spoke_indices.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(sizes.iter().all(|&s| s > 0));
            let mut all: Vec<usize> = bins.iter().flat_map(|b| b.spoke_indices.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..values.len()).collect::<Vec<_>>());
            // Amplitude ordering between consecutive bins.
            for w in bins.windows(2) {
                let hi = w[0].spoke_indices.iter().map(|&i| values[i]).fold(f64::MIN, f64::max);
                let lo = w[1].spoke_indices.iter().map(|&i| values[i]).fold(f64::MAX, f64::min);
                prop_assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let x = ComplexImage::from_fn(6, 5, |r, c| {
            Complex64::new(((r * 3 + c * 7) % 5) as f64 * 0.3, ((r + 2 * c) % 3) as f64 * 0.2)
        });
        let eps = 1e-3;
        let g = total_variation_grad(&x, eps);
        let h = 1e-6;
        for p in [0, 7, 13, 29] {
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut plus = x.clone();
                plus.data_mut()[p] += dir * h;
                let mut minus = x.clone();
                minus.data_mut()[p] -= dir * h;
                let fd = (total_variation(&plus, eps) - total_variation(&minus, eps)) / (2.0 * h);
                let an = g.data()[p].re * dir.re + g.data()[p].im * dir.im;
                assert!((fd - an).abs() < 1e-6, "pixel {p}: {fd} vs {an}");
            }
        }
        // Constant image: TV = N·sqrt(ε).
        let flat = ComplexImage::from_real(4, 4, &[2.0; 16]).unwrap();
        assert!((total_variation(&flat, 1e-6) - 16.0e-3).abs() < 1e-15);
    }

    fn static_dataset(spokes_per_frame: usize, noise: f64) -> Dataset {
        let s = PhantomSpec {
            grid_size: 16,
            num_frames: 4,
            spokes_per_frame,
            samples_per_spoke: 16,
            num_coils: 2,
            breathing_period: 4.0,
            breathing_amplitude: 0.0,
            noise_sigma: noise,
            seed: 4,
        };
        simulate(&s, Ordering::GoldenAngle, None).unwrap().dataset
    }

    fn all_spokes(dataset: &Dataset) -> PhaseBin {
        PhaseBin {
            phase_index: 0,
            spoke_indices: (0..dataset.total_spokes()).collect(),
            recon: None,
        }
    }

    #[test]
    fn fully_sampled_least_squares_fits_the_data() {
        let dataset = static_dataset(6, 0.0);
        let bin = all_spokes(&dataset);
        let config = BaselineConfig {
            tv_weight: 0.0,
            max_iters: 3000,
            tolerance: 0.0,
            ..BaselineConfig::default()
        };
        let (x, trace) = recon_phase_traced(&dataset, &bin, &config).unwrap();
        let (coords, samples) = gather_bin(&dataset, &bin.spoke_indices);
        let mut r = NudftOperator::new(16, 16, &coords).forward(&x, &dataset.coil_maps).unwrap();
        for (a, b) in r.data_mut().iter_mut().zip(samples.data()) {
            *a -= b;
        }
        let rel = (r.norm_sqr() / samples.norm_sqr()).sqrt();
        assert!(rel < 1e-2, "relative residual {rel}");
        assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn zero_data_gives_zero_image() {
        let mut dataset = static_dataset(2, 0.0);
        for frame in &mut dataset.frames {
            frame.samples.data_mut().iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        }
        let x = recon_phase(&dataset, &all_spokes(&dataset), &BaselineConfig::default()).unwrap();
        assert!(x.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn heavier_tv_weight_lowers_total_variation() {
        let dataset = static_dataset(3, 5.0);
        let bin = all_spokes(&dataset);
        let run = |mu: f64| {
            let config = BaselineConfig {
                tv_weight: mu,
                max_iters: 300,
                ..BaselineConfig::default()
            };
            recon_phase_traced(&dataset, &bin, &config).unwrap()
        };
        let (plain, _) = run(0.0);
        let (smooth, trace) = run(200.0);
        assert!(total_variation(&smooth, TV_EPSILON) < total_variation(&plain, TV_EPSILON));
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn empty_bin_rejected() {
        let dataset = static_dataset(2, 0.0);
        let bin = PhaseBin {
            phase_index: 1,
            spoke_indices: Vec::new(),
            recon: None,
        };
        assert!(recon_phase(&dataset, &bin, &BaselineConfig::default()).is_err());
    }

    #[test]
    fn pipeline_returns_one_image_per_phase() {
        let sim = simulate(&spec(2, 3.0), Ordering::GoldenAngle, Some(30.0)).unwrap();
        let config = BaselineConfig {
            max_iters: 20,
            ..BaselineConfig::default()
        };
        let (gating, bins) = run_baseline(&sim.dataset, &config).unwrap();
        assert_eq!(gating.values.len(), 160);
        assert_eq!(bins.len(), 4);
        assert!(bins.iter().all(|b| b.recon.as_ref().map(|x| x.dims()) == Some((32, 32))));
    }
}
