//! Procedural stand-in for a raw photo corpus: multi-octave smooth fields,
//! hard-edged shapes, fine texture and sensor noise. Used when no corpus
//! directory is configured and throughout the tests.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::codec::GrayPlane;
use crate::error::{Error, Result};
use crate::seed;

fn value_noise<R: Rng>(rng: &mut R, h: usize, w: usize, cell: usize) -> Array2<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice = Array2::from_shape_fn((gh, gw), |_| rng.random::<f64>() * 2.0 - 1.0);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f64 / cell as f64;
        let fx = x as f64 / cell as f64;
        let (iy, ix) = (fy as usize, fx as usize);
        let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
        let a = lattice[(iy, ix)] * (1.0 - tx) + lattice[(iy, ix + 1)] * tx;
        let b = lattice[(iy + 1, ix)] * (1.0 - tx) + lattice[(iy + 1, ix + 1)] * tx;
        a * (1.0 - ty) + b * ty
    })
}

/// Luminance field in [0, 255] with photo-like spectral falloff.
fn luminance_field<R: Rng>(rng: &mut R, h: usize, w: usize) -> Array2<f64> {
    let mut field = Array2::from_elem((h, w), 0.0);
    let base = h.max(w).max(8);
    let mut cell = base / 2;
    let mut amp = 70.0;
    while cell >= 2 {
        field = field + value_noise(rng, h, w, cell) * amp;
        cell /= 2;
        amp *= 0.55;
    }
    field.mapv_inplace(|v| v + 128.0);

    let shapes = rng.random_range(4..12);
    for _ in 0..shapes {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.05..0.3) * h as f64;
        let rx = rng.random_range(0.05..0.3) * w as f64;
        let level = rng.random_range(10.0..245.0);
        let alpha = rng.random_range(0.4..0.95);
        let ellipse = rng.random_bool(0.5);
        let texture = rng.random_range(0.0..25.0);
        let period = rng.random_range(2.0..9.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        for ((y, x), v) in field.indexed_iter_mut() {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            let inside = if ellipse {
                dy * dy + dx * dx <= 1.0
            } else {
                dy.abs() <= 1.0 && dx.abs() <= 1.0
            };
            if inside {
                let phase = (x as f64 * angle.cos() + y as f64 * angle.sin()) / period;
                let stripe = texture * (phase * std::f64::consts::TAU).sin();
                *v = *v * (1.0 - alpha) + (level + stripe) * alpha;
            }
        }
    }

    let grain = Normal::new(0.0, rng.random_range(1.0..4.0)).expect("positive std");
    field.mapv_inplace(|v| (v + grain.sample(rng)).clamp(0.0, 255.0));
    field
}

/// Deterministic synthetic grayscale image.
pub fn natural_gray(size: (usize, usize), seed_value: u64) -> GrayPlane {
    let mut rng = seed::rng(seed_value);
    luminance_field(&mut rng, size.0, size.1).mapv(|v| v.round() as u8)
}

/// Deterministic synthetic RGB image (a corpus "raw" photo).
pub fn natural_rgb(size: (usize, usize), seed_value: u64) -> RgbImage {
    let (h, w) = size;
    let mut rng = seed::rng(seed_value);
    let luma = luminance_field(&mut rng, h, w);
    let tint_r = value_noise(&mut rng, h, w, (h.max(w) / 3).max(2)) * 30.0;
    let tint_b = value_noise(&mut rng, h, w, (h.max(w) / 3).max(2)) * 30.0;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        let l = luma[(y, x)];
        let r = l + tint_r[(y, x)];
        let b = l + tint_b[(y, x)];
        // keep luma: g solves 0.299 r + 0.587 g + 0.114 b = l
        let g = (l - 0.299 * r - 0.114 * b) / 0.587;
        let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        Rgb([q(r), q(g), q(b)])
    })
}

/// Writes `count` RGB PNGs named `synth_0000.png`, ... into `dir`.
pub fn synthesize_corpus(dir: &Path, count: usize, size: (usize, usize), seed_value: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = crate::par::map_range(count, |i| {
        let path = dir.join(format!("synth_{i:04}.png"));
        let img = natural_rgb(size, seed::derive(seed_value, &format!("synth/{i}")));
        img.save(&path).map(|_| path)
    });
    paths.into_iter().map(|p| p.map_err(Error::from)).collect()
}
