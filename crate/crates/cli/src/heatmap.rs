//! Heatmap export: CSV with unit ids on both axes and a min-max grayscale PNG.

use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, Luma};
use mgdoc::docmodel::{GranularUnit, Granularity};
use ndarray::Array2;

/// Pixels per heatmap cell in the PNG.
pub const CELL: u32 = 8;

fn ids(units: &[GranularUnit], g: Granularity) -> Vec<String> {
    units
        .iter()
        .filter(|u| u.granularity == g)
        .map(|u| u.unit_index.to_string())
        .collect()
}

/// Rows are regions, columns words, both labeled by unit index.
pub fn write_csv(h: &Array2<f64>, units: &[GranularUnit], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["region\\word".to_string()];
    header.extend(ids(units, Granularity::Word));
    w.write_record(&header)?;
    for (id, row) in ids(units, Granularity::Region).into_iter().zip(h.rows()) {
        let mut rec = vec![id];
        rec.extend(row.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Bright cells are high scores; a constant matrix renders mid-gray.
pub fn render(h: &Array2<f64>) -> GrayImage {
    let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (rows, cols) = h.dim();
    GrayImage::from_fn(cols as u32 * CELL, rows as u32 * CELL, |x, y| {
        let v = h[[(y / CELL) as usize, (x / CELL) as usize]];
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        Luma([(t * 255.0).round() as u8])
    })
}

pub fn write_png(h: &Array2<f64>, path: &Path) -> Result<()> {
    render(h).save(path).with_context(|| format!("writing {}", path.display()))
}
