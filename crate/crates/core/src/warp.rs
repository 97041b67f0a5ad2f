//! Bilinear deformation `out(x) = f(x − φ(x))` with its adjoint in `f`,
//! its derivative in `φ`, and corner-aligned upsampling of coarse fields.
//!
//! Sample positions outside the grid clamp to the border pixel; where a
//! coordinate is clamped its derivative with respect to `φ` is zero.

use num_complex::Complex64;

use crate::error::{invalid, mismatch, Result};
use crate::image::{ComplexImage, MotionField};

/// Interpolation stencil along one axis.
#[derive(Clone, Copy, Debug)]
struct AxisStencil {
    lo: usize,
    frac: f64,
    // false when the coordinate was clamped
    free: bool,
}

#[inline]
fn stencil(pos: f64, n: usize) -> AxisStencil {
    let max = (n - 1) as f64;
    let (u, free) = if pos < 0.0 {
        (0.0, false)
    } else if pos > max {
        (max, false)
    } else {
        (pos, true)
    };
    if n == 1 {
        return AxisStencil { lo: 0, frac: 0.0, free: false };
    }
    let lo = (u.floor() as usize).min(n - 2);
    AxisStencil {
        lo,
        frac: u - lo as f64,
        free,
    }
}

fn check(f_dims: (usize, usize), phi: &MotionField) -> Result<()> {
    if f_dims != phi.dims() {
        return Err(mismatch(format!(
            "image {}x{} vs motion field {}x{}",
            f_dims.0,
            f_dims.1,
            phi.rows(),
            phi.cols()
        )));
    }
    phi.check_finite()
}

/// Visits every output pixel with its two axis stencils.
#[inline]
fn for_each_stencil(phi: &MotionField, mut visit: impl FnMut(usize, usize, AxisStencil, AxisStencil)) {
    let (rows, cols) = phi.dims();
    let d0 = phi.component(0);
    let d1 = phi.component(1);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let sr = stencil(r as f64 - d0[i], rows);
            let sc = stencil(c as f64 - d1[i], cols);
            visit(i, r, sr, sc);
        }
    }
}

fn neighbors(f: &[Complex64], cols: usize, sr: AxisStencil, sc: AxisStencil) -> [Complex64; 4] {
    let (r0, c0) = (sr.lo, sc.lo);
    let r1 = (r0 + 1).min(f.len() / cols - 1);
    let c1 = (c0 + 1).min(cols - 1);
    [
        f[r0 * cols + c0],
        f[r0 * cols + c1],
        f[r1 * cols + c0],
        f[r1 * cols + c1],
    ]
}

pub fn warp_forward(f: &ComplexImage, phi: &MotionField) -> Result<ComplexImage> {
    check(f.dims(), phi)?;
    let cols = f.cols();
    let src = f.data();
    let mut out = ComplexImage::zeros(f.rows(), cols);
    let dst = out.data_mut();
    for_each_stencil(phi, |i, _, sr, sc| {
        let [v00, v01, v10, v11] = neighbors(src, cols, sr, sc);
        let (a, b) = (sr.frac, sc.frac);
        dst[i] = (v00 * (1.0 - b) + v01 * b) * (1.0 - a) + (v10 * (1.0 - b) + v11 * b) * a;
    });
    Ok(out)
}

/// Transpose of the interpolation matrix of [`warp_forward`].
pub fn warp_adjoint_image(g_out: &ComplexImage, phi: &MotionField) -> Result<ComplexImage> {
    check(g_out.dims(), phi)?;
    let (rows, cols) = g_out.dims();
    let g = g_out.data();
    let mut out = ComplexImage::zeros(rows, cols);
    let dst = out.data_mut();
    for_each_stencil(phi, |i, _, sr, sc| {
        let v = g[i];
        let (a, b) = (sr.frac, sc.frac);
        let r1 = (sr.lo + 1).min(rows - 1);
        let c1 = (sc.lo + 1).min(cols - 1);
        dst[sr.lo * cols + sc.lo] += v * ((1.0 - a) * (1.0 - b));
        dst[sr.lo * cols + c1] += v * ((1.0 - a) * b);
        dst[r1 * cols + sc.lo] += v * (a * (1.0 - b));
        dst[r1 * cols + c1] += v * (a * b);
    });
    Ok(out)
}

/// Gradient of `L = Re⟨g_out, warp_forward(f, φ)⟩` with respect to `φ`.
pub fn warp_grad_motion(
    g_out: &ComplexImage,
    f: &ComplexImage,
    phi: &MotionField,
) -> Result<MotionField> {
    check(f.dims(), phi)?;
    g_out.check_same_dims(f, "warp gradient")?;
    let (rows, cols) = f.dims();
    let src = f.data();
    let g = g_out.data();
    let n = rows * cols;
    let mut grad = vec![0.0; 2 * n];
    for_each_stencil(phi, |i, _, sr, sc| {
        let [v00, v01, v10, v11] = neighbors(src, cols, sr, sc);
        let (a, b) = (sr.frac, sc.frac);
        let gc = g[i].conj();
        if sr.free {
            let du = (v10 - v00) * (1.0 - b) + (v11 - v01) * b;
            grad[i] = -(gc * du).re;
        }
        if sc.free {
            let dv = (v01 - v00) * (1.0 - a) + (v11 - v10) * a;
            grad[n + i] = -(gc * dv).re;
        }
    });
    MotionField::from_vec(rows, cols, grad)
}

/// Corner-aligned bilinear positions of `fine` samples on a `coarse` axis.
fn resample_axis(coarse: usize, fine: usize) -> Vec<(usize, f64)> {
    (0..fine)
        .map(|j| {
            if coarse == 1 || fine == 1 {
                return (0, 0.0);
            }
            let pos = j as f64 * (coarse - 1) as f64 / (fine - 1) as f64;
            let lo = (pos.floor() as usize).min(coarse - 2);
            (lo, pos - lo as f64)
        })
        .collect()
}

fn check_upsample(coarse: (usize, usize), target: (usize, usize)) -> Result<()> {
    if target.0 < coarse.0 || target.1 < coarse.1 {
        return Err(invalid(format!(
            "cannot upsample {}x{} to smaller grid {}x{}",
            coarse.0, coarse.1, target.0, target.1
        )));
    }
    if coarse.0 == 0 || coarse.1 == 0 {
        return Err(invalid("empty motion grid"));
    }
    Ok(())
}

/// Bilinear corner-aligned upsampling; displacement values are scaled so
/// they are measured in target-grid pixels.
pub fn upsample_motion(coarse: &MotionField, target: (usize, usize)) -> Result<MotionField> {
    let (h, w) = coarse.dims();
    check_upsample((h, w), target)?;
    let (rows, cols) = target;
    let ry = resample_axis(h, rows);
    let rx = resample_axis(w, cols);
    let scale = [rows as f64 / h as f64, cols as f64 / w as f64];
    let mut out = MotionField::zeros(rows, cols);
    for (axis, &factor) in scale.iter().enumerate() {
        let src = coarse.component(axis);
        let dst = out.component_mut(axis);
        for (r, &(y0, a)) in ry.iter().enumerate() {
            let y1 = (y0 + 1).min(h - 1);
            for (c, &(x0, b)) in rx.iter().enumerate() {
                let x1 = (x0 + 1).min(w - 1);
                let v = (src[y0 * w + x0] * (1.0 - b) + src[y0 * w + x1] * b) * (1.0 - a)
                    + (src[y1 * w + x0] * (1.0 - b) + src[y1 * w + x1] * b) * a;
                dst[r * cols + c] = v * factor;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample_motion`]: pulls a fine-grid gradient back onto the
/// coarse grid.
pub fn upsample_motion_adjoint(fine: &MotionField, coarse: (usize, usize)) -> Result<MotionField> {
    let (rows, cols) = fine.dims();
    check_upsample(coarse, (rows, cols))?;
    let (h, w) = coarse;
    let ry = resample_axis(h, rows);
    let rx = resample_axis(w, cols);
    let scale = [rows as f64 / h as f64, cols as f64 / w as f64];
    let mut out = MotionField::zeros(h, w);
    for (axis, &factor) in scale.iter().enumerate() {
        let src = fine.component(axis);
        let dst = out.component_mut(axis);
        for (r, &(y0, a)) in ry.iter().enumerate() {
            let y1 = (y0 + 1).min(h - 1);
            for (c, &(x0, b)) in rx.iter().enumerate() {
                let x1 = (x0 + 1).min(w - 1);
                let v = src[r * cols + c] * factor;
                dst[y0 * w + x0] += v * (1.0 - a) * (1.0 - b);
                dst[y0 * w + x1] += v * (1.0 - a) * b;
                dst[y1 * w + x0] += v * a * (1.0 - b);
                dst[y1 * w + x1] += v * a * b;
            }
        }
    }
    Ok(out)
}
