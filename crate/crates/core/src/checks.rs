//! Numerical self-checks: adjoint dot-product tests and finite-difference
//! gradient checks on small random instances.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{loss_and_gradients, AdamMoments, DataTerm, Problem, ReconState, Stage};
use crate::error::Result;
use crate::generator::{init_params, Activation, Architecture, GeneratorConfig, LatentTrajectory};
use crate::image::{CMatrix, ComplexImage, MotionField};
use crate::nudft::{nudft_adjoint, nudft_forward, KPoint, Ordering};
use crate::phantom::PhantomSpec;
use crate::simulation::simulate;
use crate::warp::{warp_adjoint_image, warp_forward};

/// Worst relative error found by a check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckReport {
    pub instances: usize,
    pub max_rel_error: f64,
}

fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexImage {
    ComplexImage::from_fn(rows, cols, |_, _| random_complex(rng))
}

/// `|⟨Ax,y⟩ − ⟨x,Aᴴy⟩| / (‖Ax‖‖y‖)` for the multi-coil NUDFT on random
/// grids of 8 to 32 pixels, 1 to 4 coils and 5 to 64 k-points.
pub fn nudft_adjoint_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let rows = rng.random_range(8..=32);
        let cols = rng.random_range(8..=32);
        let coils = rng.random_range(1..=4);
        let points = rng.random_range(5..=64);
        let x = random_image(&mut rng, rows, cols);
        let maps: Vec<_> = (0..coils).map(|_| random_image(&mut rng, rows, cols)).collect();
        let coords: Vec<KPoint> = (0..points)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        let y = CMatrix::from_vec(
            coils,
            points,
            (0..coils * points).map(|_| random_complex(&mut rng)).collect(),
        )?;
        let ax = nudft_forward(&x, &maps, &coords)?;
        let ahy = nudft_adjoint(&y, &maps, &coords)?;
        let rel = (ax.inner(&y) - x.inner(&ahy)).norm() / (ax.norm_sqr().sqrt() * y.norm_sqr().sqrt());
        worst = worst.max(rel);
    }
    Ok(CheckReport {
        instances,
        max_rel_error: worst,
    })
}

/// Dot-product test of the bilinear warp against its image adjoint, with
/// displacements large enough to exercise border clamping.
pub fn warp_adjoint_check(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let rows = rng.random_range(8..=32);
        let cols = rng.random_range(8..=32);
        let reach = rows.min(cols) as f64 / 4.0;
        let phi = MotionField::from_vec(
            rows,
            cols,
            (0..2 * rows * cols).map(|_| rng.random_range(-reach..reach)).collect(),
        )?;
        let x = random_image(&mut rng, rows, cols);
        let y = random_image(&mut rng, rows, cols);
        let wx = warp_forward(&x, &phi)?;
        let wy = warp_adjoint_image(&y, &phi)?;
        let rel = (wx.inner(&y) - x.inner(&wy)).norm() / (wx.norm_sqr().sqrt() * y.norm_sqr().sqrt());
        worst = worst.max(rel);
    }
    Ok(CheckReport {
        instances,
        max_rel_error: worst,
    })
}

fn check_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        grid_size: 16,
        num_frames: 4,
        spokes_per_frame: 3,
        samples_per_spoke: 16,
        num_coils: 2,
        breathing_period: 4.0,
        breathing_amplitude: 1.5,
        noise_sigma: 0.0,
        seed,
    }
}

fn random_check_state(architecture: Architecture, seed: u64) -> Result<ReconState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The conv decoder needs a motion grid that is a multiple of 8.
    let gen = GeneratorConfig {
        architecture,
        activation: Activation::Tanh,
        latent_dim: 2,
        grid: if architecture == Architecture::ConvDecoder { 8 } else { 4 },
    };
    let mut theta = init_params(gen, seed, 0.5)?;
    for v in theta.values.iter_mut() {
        *v *= 3.0;
    }
    let f = random_image(&mut rng, 16, 16);
    let z = LatentTrajectory::from_vec(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok(ReconState {
        f,
        adam_f: AdamMoments::zeros(512),
        adam_theta: AdamMoments::zeros(theta.len()),
        adam_z: AdamMoments::zeros(8),
        theta,
        z,
        epoch: 0,
        stage: Stage::Fine,
        loss_history: Vec::new(),
    })
}

struct Direction {
    f: Vec<Complex64>,
    theta: Vec<f64>,
    z: Vec<f64>,
}

fn step(state: &ReconState, dir: &Direction, h: f64) -> ReconState {
    let mut out = state.clone();
    for (v, d) in out.f.data_mut().iter_mut().zip(&dir.f) {
        *v += d * h;
    }
    for (v, d) in out.theta.values.iter_mut().zip(&dir.theta) {
        *v += d * h;
    }
    for (v, d) in out.z.data_mut().iter_mut().zip(&dir.z) {
        *v += d * h;
    }
    out
}

/// Central-difference directional derivatives of the full loss (data
/// term plus smoothness) against the analytic gradient on a 16×16,
/// four-frame instance, for both generator architectures and both data
/// term evaluations. Each direction perturbs `f`, `θ` and `Z` at once.
pub fn gradient_check(directions: usize, seed: u64) -> Result<CheckReport> {
    let sim = simulate(&check_spec(seed), Ordering::GoldenAngle, Some(20.0))?;
    let lambda = 0.7;
    let batch = [0, 2, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for mode in [DataTerm::Direct, DataTerm::Toeplitz] {
        let problem = Problem::full(&sim.dataset, mode)?;
        for arch in [Architecture::Mlp, Architecture::ConvDecoder] {
            let state = random_check_state(arch, seed)?;
            let grads = loss_and_gradients(&state, &batch, &problem, lambda)?;
            for _ in 0..directions {
                let dir = Direction {
                    f: (0..state.f.len()).map(|_| random_complex(&mut rng)).collect(),
                    theta: (0..state.theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    z: (0..state.z.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                };
                let analytic: f64 = grads
                    .f
                    .data()
                    .iter()
                    .zip(&dir.f)
                    .map(|(g, d)| g.re * d.re + g.im * d.im)
                    .sum::<f64>()
                    + grads.theta.iter().zip(&dir.theta).map(|(g, d)| g * d).sum::<f64>()
                    + grads.z.iter().zip(&dir.z).map(|(g, d)| g * d).sum::<f64>();
                let h = 1e-6;
                let plus = loss_and_gradients(&step(&state, &dir, h), &batch, &problem, lambda)?.loss;
                let minus = loss_and_gradients(&step(&state, &dir, -h), &batch, &problem, lambda)?.loss;
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max((numeric - analytic).abs() / analytic.abs().max(1e-12));
                count += 1;
            }
        }
    }
    Ok(CheckReport {
        instances: count,
        max_rel_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_checks_pass() {
        assert!(nudft_adjoint_check(5, 1).unwrap().max_rel_error < 1e-10);
        assert!(warp_adjoint_check(5, 1).unwrap().max_rel_error < 1e-12);
    }

    #[test]
    fn gradient_check_passes() {
        let report = gradient_check(3, 2).unwrap();
        assert_eq!(report.instances, 12);
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }
}
