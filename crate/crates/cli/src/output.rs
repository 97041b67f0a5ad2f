use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use moco_core::{ComplexImage, MotionField};
use serde::Serialize;
use serde_json::Value;

pub const ECHO_FILE: &str = "config_echo.json";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Records the command and every effective parameter next to its outputs.
pub fn write_echo(dir: &Path, command: &str, params: Value) -> Result<()> {
    let echo = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "parameters": params,
    });
    write_json(&dir.join(ECHO_FILE), &echo)
}

pub fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    Ok(w)
}

/// 8-bit grayscale PNG of `values` scaled by their maximum.
pub fn write_png(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| if peak > 0.0 { (255.0 * (v / peak).clamp(0.0, 1.0)).round() as u8 } else { 0 })
        .collect();
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&pixels)?;
    writer.finish()?;
    Ok(())
}

pub fn write_magnitude_png(path: &Path, img: &ComplexImage) -> Result<()> {
    write_png(path, img.rows(), img.cols(), &img.magnitude())
}

/// Displacement length per pixel as a PNG.
pub fn write_motion_png(path: &Path, phi: &MotionField) -> Result<()> {
    let (rows, cols) = phi.dims();
    let d0 = phi.component(0);
    let d1 = phi.component(1);
    let len: Vec<f64> = d0.iter().zip(d1).map(|(a, b)| a.hypot(*b)).collect();
    write_png(path, rows, cols, &len)
}

/// Arrows every `stride` pixels: position and displacement per row.
pub fn write_quiver_csv(path: &Path, phi: &MotionField, stride: usize) -> Result<()> {
    let mut w = csv_writer(path, &["row", "col", "d_row", "d_col"])?;
    let (rows, cols) = phi.dims();
    for r in (0..rows).step_by(stride.max(1)) {
        for c in (0..cols).step_by(stride.max(1)) {
            let [d0, d1] = phi.at(r, c);
            w.write_record(&[r.to_string(), c.to_string(), d0.to_string(), d1.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

