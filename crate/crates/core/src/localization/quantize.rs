use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Round-and-clip quantizer onto `{-T, ..., T}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualQuantizer {
    pub quantization_step: f64,
    pub truncation: i32,
}

impl ResidualQuantizer {
    pub fn new(quantization_step: f64, truncation: i32) -> Result<Self> {
        if !(quantization_step > 0.0 && quantization_step.is_finite()) {
            return Err(Error::Config(format!(
                "quantization step must be positive, got {quantization_step}"
            )));
        }
        if truncation < 1 {
            return Err(Error::Config(format!("truncation must be >= 1, got {truncation}")));
        }
        Ok(Self {
            quantization_step,
            truncation,
        })
    }

    /// Step = std(values) / `scale`, so one standard deviation spans
    /// `scale` levels. Constant planes get step 1.
    pub fn adaptive(values: &Array2<f32>, truncation: i32, scale: f64) -> Result<Self> {
        let n = values.len().max(1) as f64;
        let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = values.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let step = if std > 0.0 && std.is_finite() { std / scale } else { 1.0 };
        Self::new(step, truncation)
    }

    pub fn levels(&self) -> usize {
        (2 * self.truncation + 1) as usize
    }

    pub fn quantize(&self, x: f64) -> i8 {
        let t = f64::from(self.truncation);
        (x / self.quantization_step).round().clamp(-t, t) as i8
    }
}

pub fn quantize_residual(values: &Array2<f32>, q: &ResidualQuantizer) -> Result<Array2<i8>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot quantize a non-finite fingerprint".into()));
    }
    Ok(values.mapv(|v| q.quantize(f64::from(v))))
}

/// `values` minus its 3x3 local mean (edges replicated).
pub fn high_pass(values: &Array2<f32>) -> Array2<f32> {
    let (h, w) = values.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0f32;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += values[(yy, xx)];
            }
        }
        values[(y, x)] - acc / 9.0
    })
}
