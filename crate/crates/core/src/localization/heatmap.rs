use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::em::GaussianMixtureState;
use super::features::GridGeometry;
use crate::error::{Error, Result};

/// Per-pixel score; larger means more likely the anomalous component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    #[serde(skip)]
    pub values: Array2<f32>,
    pub source_id: String,
    pub model_tag: String,
}

impl Heatmap {
    pub fn new(values: Array2<f32>, source_id: impl Into<String>, model_tag: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("heatmap contains non-finite values".into()));
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
            model_tag: model_tag.into(),
        })
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.mapv(|v| -v),
            ..self.clone()
        }
    }
}

/// Interpolation weights along one axis: (lower cell, upper cell, upper weight).
fn axis_weights(len: usize, cells: usize, first_center: f64, stride: usize) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|p| {
            if cells == 1 {
                return (0, 0, 0.0);
            }
            let t = ((p as f64 - first_center) / stride as f64).clamp(0.0, (cells - 1) as f64);
            let lo = (t.floor() as usize).min(cells - 2);
            (lo, lo + 1, t - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation of per-window values placed at window centers;
/// outside the outermost centers the nearest value is held.
pub fn upsample(cells: &Array2<f64>, geometry: &GridGeometry) -> Array2<f64> {
    let (h, w) = geometry.image_shape;
    let c0 = geometry.first_center();
    let ys = axis_weights(h, geometry.rows, c0, geometry.stride);
    let xs = axis_weights(w, geometry.cols, c0, geometry.stride);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = cells[(y0, x0)] * (1.0 - fx) + cells[(y0, x1)] * fx;
        let bottom = cells[(y1, x0)] * (1.0 - fx) + cells[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn heatmap_from_responsibilities(
    state: &GaussianMixtureState,
    points: &Array2<f64>,
    geometry: &GridGeometry,
    source_id: &str,
    model_tag: &str,
) -> Result<Heatmap> {
    if points.nrows() != geometry.cells() {
        return Err(Error::Shape {
            expected: (geometry.cells(), points.ncols()),
            actual: points.dim(),
        });
    }
    let llr = state.log_likelihood_ratio(points)?;
    let cells = Array2::from_shape_vec((geometry.rows, geometry.cols), llr).expect("grid sized");
    let values = upsample(&cells, geometry).mapv(|v| v as f32);
    Heatmap::new(values, source_id, model_tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(h: usize, w: usize, window: usize, stride: usize) -> GridGeometry {
        GridGeometry::new((h, w), window, stride).unwrap()
    }

    #[test]
    fn constant_cells_give_constant_map() {
        let g = geom(50, 40, 10, 5);
        let cells = Array2::from_elem((g.rows, g.cols), 0.7);
        let up = upsample(&cells, &g);
        assert_eq!(up.dim(), (50, 40));
        assert!(up.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn hits_cell_values_at_centers() {
        let g = geom(33, 33, 9, 4);
        let cells = Array2::from_shape_fn((g.rows, g.cols), |(r, c)| (r * 10 + c) as f64);
        let up = upsample(&cells, &g);
        for r in 0..g.rows {
            for c in 0..g.cols {
                assert_eq!(up[(4 + r * 4, 4 + c * 4)], cells[(r, c)]);
            }
        }
        // held constant beyond the outer centers
        assert_eq!(up[(0, 0)], cells[(0, 0)]);
        assert_eq!(up[(32, 32)], cells[(g.rows - 1, g.cols - 1)]);
        // midpoint between two centers
        assert!((up[(4, 6)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_window() {
        let g = geom(8, 8, 8, 3);
        let up = upsample(&Array2::from_elem((1, 1), 2.0), &g);
        assert!(up.iter().all(|&v| v == 2.0));
    }
}
