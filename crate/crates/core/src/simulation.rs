//! Ready-made synthetic acquisitions.

use serde::{Deserialize, Serialize};

use crate::engine::Dataset;
use crate::error::Result;
use crate::nudft::{make_trajectory, Ordering, Trajectory};
use crate::phantom::{make_ground_truth, noise_sigma_for_snr, simulate_kspace, GroundTruth, PhantomSpec};

/// SNR of the benchmark acquisition in dB.
pub const BENCHMARK_SNR_DB: f64 = 30.0;

/// A simulated acquisition together with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub spec: PhantomSpec,
    pub trajectory: Trajectory,
    pub truth: GroundTruth,
    pub dataset: Dataset,
}

/// 64², 40 frames of 12 spokes with 64 samples, 4 coils, 4 px breathing
/// with a 10-frame period. The noise level is set by [`simulate`].
pub fn benchmark_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        grid_size: 64,
        num_frames: 40,
        spokes_per_frame: 12,
        samples_per_spoke: 64,
        num_coils: 4,
        breathing_period: 10.0,
        breathing_amplitude: 4.0,
        noise_sigma: 0.0,
        seed,
    }
}

/// Simulates `spec`. When `snr_db` is given it overrides
/// `spec.noise_sigma` with the level giving that SNR.
pub fn simulate(spec: &PhantomSpec, ordering: Ordering, snr_db: Option<f64>) -> Result<Simulation> {
    spec.validate()?;
    let trajectory = make_trajectory(
        spec.total_spokes(),
        spec.samples_per_spoke,
        spec.spokes_per_frame,
        ordering,
    )?;
    let truth = make_ground_truth(spec)?;
    let mut spec = spec.clone();
    if let Some(snr) = snr_db {
        spec.noise_sigma = noise_sigma_for_snr(&spec, &truth, &trajectory, snr)?;
    }
    let frames = simulate_kspace(&spec, &truth, &trajectory)?;
    let dataset = Dataset {
        rows: spec.grid_size,
        cols: spec.grid_size,
        spokes_per_frame: spec.spokes_per_frame,
        samples_per_spoke: spec.samples_per_spoke,
        coil_maps: truth.coil_maps.clone(),
        frames,
    };
    Ok(Simulation {
        spec,
        trajectory,
        truth,
        dataset,
    })
}

/// The benchmark acquisition for `seed` with golden-angle ordering.
pub fn simulate_benchmark(seed: u64) -> Result<Simulation> {
    simulate(&benchmark_spec(seed), Ordering::GoldenAngle, Some(BENCHMARK_SNR_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_noise_matches_requested_snr() {
        let sim = simulate_benchmark(3).unwrap();
        assert_eq!(sim.dataset.frames.len(), 40);
        assert!(sim.spec.noise_sigma > 0.0);
        sim.dataset.validate().unwrap();
        // Residual power against the noiseless simulation sits near σ².
        let mut clean_spec = sim.spec.clone();
        clean_spec.noise_sigma = 0.0;
        let clean = simulate(&clean_spec, Ordering::GoldenAngle, None).unwrap();
        let (mut noise, mut signal, mut n) = (0.0, 0.0, 0usize);
        for (a, b) in sim.dataset.frames.iter().zip(&clean.dataset.frames) {
            for (x, y) in a.samples.data().iter().zip(b.samples.data()) {
                noise += (x - y).norm_sqr();
                signal += y.norm_sqr();
                n += 1;
            }
        }
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - BENCHMARK_SNR_DB).abs() < 0.2, "snr {snr}");
        assert!(((noise / n as f64).sqrt() / sim.spec.noise_sigma - 1.0).abs() < 0.02);
    }
}
