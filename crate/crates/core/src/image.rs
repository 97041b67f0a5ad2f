//! Dense grid containers shared by every stage of the pipeline.
//!
//! Grids are stored row-major with axis 0 = rows (superior-inferior in the
//! phantom) and axis 1 = columns. Spatial coordinates used by the Fourier
//! operators are pixel indices offset so that pixel `(rows/2, cols/2)` is
//! the origin.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Complex-valued image on a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexImage {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "image buffer has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(
            rows,
            cols,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `Σ conj(self) · other`.
    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn check_same_dims(&self, other: &ComplexImage, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(mismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Subsample every `factor`-th pixel, keeping the grid center fixed.
    pub fn subsample(&self, factor: usize) -> ComplexImage {
        let rows = self.rows / factor;
        let cols = self.cols / factor;
        ComplexImage::from_fn(rows, cols, |r, c| self.get(r * factor, c * factor))
    }
}

/// Per-pixel displacement field, component 0 along rows and component 1
/// along columns, in pixels of its own grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MotionField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; 2 * rows * cols],
        }
    }

    /// Builds a field from a `[2 × rows × cols]` component-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * rows * cols {
            return Err(mismatch(format!(
                "motion buffer has {} entries, expected 2x{}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn constant(rows: usize, cols: usize, d0: f64, d1: f64) -> Self {
        let n = rows * cols;
        let mut data = vec![d0; 2 * n];
        data[n..].iter_mut().for_each(|v| *v = d1);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[axis * n..(axis + 1) * n]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        let n = self.rows * self.cols;
        &mut self.data[axis * n..(axis + 1) * n]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> [f64; 2] {
        let i = r * self.cols + c;
        [self.data[i], self.data[self.rows * self.cols + i]]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: [f64; 2]) {
        let i = r * self.cols + c;
        let n = self.rows * self.cols;
        self.data[i] = v[0];
        self.data[n + i] = v[1];
    }

    /// Largest displacement vector length over the grid.
    pub fn max_magnitude(&self) -> f64 {
        let n = self.rows * self.cols;
        (0..n)
            .map(|i| self.data[i].hypot(self.data[n + i]))
            .fold(0.0, f64::max)
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "motion field entry {pos} is not finite"
            )));
        }
        Ok(())
    }
}

/// Dense complex matrix, row-major. Used for multicoil k-space samples with
/// one row per coil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "matrix buffer has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &CMatrix) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> CMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            data.extend(cols.iter().map(|&c| self.get(r, c)));
        }
        CMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}
