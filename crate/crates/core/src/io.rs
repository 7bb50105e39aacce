//! Array containers (`.npy`) and PNG previews for fingerprints and heatmaps.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::dataset::codec::{self, GrayPlane};
use crate::error::{Error, Result};

pub fn write_npy(path: &Path, values: &Array2<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ndarray_npy::write_npy(path, values).map_err(|e| Error::Npy(format!("{}: {e}", path.display())))
}

pub fn read_npy(path: &Path) -> Result<Array2<f32>> {
    ndarray_npy::read_npy(path).map_err(|e| Error::Npy(format!("{}: {e}", path.display())))
}

/// Min-max scaled 8-bit preview.
pub fn minmax_preview(values: &Array2<f32>) -> GrayPlane {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    values.mapv(|v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            128
        }
    })
}

pub fn write_minmax_png(path: &Path, values: &Array2<f32>) -> Result<()> {
    codec::write_png(path, &minmax_preview(values)).map(|_| ())
}

/// Blue-white-red preview centred on zero.
pub fn write_diverging_png(path: &Path, values: &Array2<f32>) -> Result<()> {
    let m = values.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    let (h, w) = values.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let t = if m > 0.0 { values[(y as usize, x as usize)] / m } else { 0.0 };
        let fade = |t: f32| (255.0 * (1.0 - t.abs())).round() as u8;
        if t >= 0.0 {
            Rgb([255, fade(t), fade(t)])
        } else {
            Rgb([fade(t), fade(t), 255])
        }
    });
    img.save(path).map_err(Error::from)
}
