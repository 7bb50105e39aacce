use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cooccurrence::{run_code, SymmetryFold};
use crate::error::{Error, Result};
use crate::par;

/// Placement of the sliding windows over the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub stride: usize,
    pub image_shape: (usize, usize),
}

impl GridGeometry {
    pub fn new(image_shape: (usize, usize), window: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        let (h, w) = image_shape;
        if window == 0 || window > h || window > w {
            return Err(Error::Config(format!(
                "window {window} does not fit a {h}x{w} plane"
            )));
        }
        Ok(Self {
            rows: (h - window) / stride + 1,
            cols: (w - window) / stride + 1,
            window,
            stride,
            image_shape,
        })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (row * self.stride, col * self.stride)
    }

    /// Pixel coordinate of the center of the first window along an axis.
    pub fn first_center(&self) -> f64 {
        (self.window as f64 - 1.0) / 2.0
    }
}

/// One feature vector per window, stored row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    pub vectors: Array2<f64>,
    pub geometry: GridGeometry,
}

impl FeatureField {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Folded class of every horizontal run (`h x (w-order+1)`) and every
/// vertical run (`(h-order+1) x w`).
fn run_classes(q: &Array2<i8>, truncation: i32, order: usize, fold: &SymmetryFold) -> (Array2<u16>, Array2<u16>) {
    let (h, w) = q.dim();
    let levels = fold.levels;
    let hz = Array2::from_shape_fn((h, w + 1 - order), |(r, c)| {
        fold.class_of[run_code((0..order).map(|k| q[(r, c + k)]), truncation, levels)]
    });
    let vt = Array2::from_shape_fn((h + 1 - order, w), |(r, c)| {
        fold.class_of[run_code((0..order).map(|k| q[(r + k, c)]), truncation, levels)]
    });
    (hz, vt)
}

/// Sliding-window co-occurrence features: both directions summed, folded
/// under negation and reversal, L1-normalized.
pub fn build_feature_field(
    quantized: &Array2<i8>,
    truncation: i32,
    window: usize,
    stride: usize,
    order: usize,
) -> Result<FeatureField> {
    let geometry = GridGeometry::new(quantized.dim(), window, stride)?;
    if order < 2 || order > window {
        return Err(Error::Config(format!(
            "co-occurrence order {order} must lie in 2..={window}"
        )));
    }
    if let Some(v) = quantized.iter().find(|v| i32::from(**v).abs() > truncation) {
        return Err(Error::Data(format!("quantized value {v} exceeds truncation {truncation}")));
    }
    let levels = (2 * truncation + 1) as usize;
    let fold = SymmetryFold::new(levels, order);
    let classes = fold.classes;
    let (hz, vt) = run_classes(quantized, truncation, order, &fold);
    let w = quantized.ncols();
    let span = window + 1 - order;
    let norm = (2 * window * span) as f64;

    // One band of window rows at a time: per-column class counts, prefix
    // summed along columns, then each window is a difference of prefixes.
    let bands = par::map_range(geometry.rows, |gr| {
        let r0 = gr * stride;
        let mut prefix_h = vec![0u32; (w + 2 - order) * classes];
        for c in 0..w + 1 - order {
            for r in r0..r0 + window {
                prefix_h[(c + 1) * classes + usize::from(hz[(r, c)])] += 1;
            }
            for k in 0..classes {
                prefix_h[(c + 1) * classes + k] += prefix_h[c * classes + k];
            }
        }
        let mut prefix_v = vec![0u32; (w + 1) * classes];
        for c in 0..w {
            for r in r0..r0 + span {
                prefix_v[(c + 1) * classes + usize::from(vt[(r, c)])] += 1;
            }
            for k in 0..classes {
                prefix_v[(c + 1) * classes + k] += prefix_v[c * classes + k];
            }
        }
        let mut out = vec![0f64; geometry.cols * classes];
        for gc in 0..geometry.cols {
            let c0 = gc * stride;
            let dst = &mut out[gc * classes..(gc + 1) * classes];
            for (k, d) in dst.iter_mut().enumerate() {
                let h = prefix_h[(c0 + span) * classes + k] - prefix_h[c0 * classes + k];
                let v = prefix_v[(c0 + window) * classes + k] - prefix_v[c0 * classes + k];
                *d = f64::from(h + v) / norm;
            }
        }
        out
    });
    let data: Vec<f64> = bands.into_iter().flatten().collect();
    let vectors = Array2::from_shape_vec((geometry.cells(), classes), data)
        .expect("band layout matches the grid");
    Ok(FeatureField { vectors, geometry })
}
