use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::features::{FeatureField, GridGeometry};
use crate::error::{Error, Result};

/// Principal-component projection fitted on one image's windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `d` rows of unit-length principal axes, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues of the covariance, decreasing.
    pub eigenvalues: Vec<f64>,
}

impl Projection {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|axis| axis.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (axis, &zc) in self.components.iter().zip(z) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += zc * a;
            }
        }
        out
    }

    pub fn discarded_variance(&self) -> f64 {
        self.eigenvalues[self.components.len()..].iter().map(|v| v.max(0.0)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedField {
    pub vectors: Array2<f64>,
    pub geometry: GridGeometry,
    pub projection: Projection,
    /// All input vectors coincide; nothing to cluster.
    pub degenerate: bool,
}

/// Covariance is normalized by the number of vectors.
pub fn reduce_dimension(field: &FeatureField, d: usize) -> Result<ReducedField> {
    let (n, dim) = field.vectors.dim();
    if d == 0 || d > dim {
        return Err(Error::Config(format!("reduced dimension {d} must lie in 1..={dim}")));
    }
    if n < d + 1 {
        return Err(Error::Data(format!("need at least {} feature vectors, have {n}", d + 1)));
    }
    let mean: Array1<f64> = field.vectors.mean_axis(Axis(0)).expect("non-empty field");
    let centered = &field.vectors - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let cov = DMatrix::from_fn(dim, dim, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let components: Vec<Vec<f64>> = order[..d]
        .iter()
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            // sign convention: largest-magnitude entry positive
            let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            let s = if pivot < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| s * v).collect()
        })
        .collect();
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let scale = mean.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let degenerate = !(total > 1e-24 * scale) || !total.is_finite();
    let projection = Projection {
        mean: mean.to_vec(),
        components,
        eigenvalues,
    };
    let mut vectors = Array2::<f64>::zeros((n, d));
    for (i, row) in field.vectors.rows().into_iter().enumerate() {
        let z = projection.project(row.as_slice().expect("standard layout"));
        vectors.row_mut(i).assign(&Array1::from(z));
    }
    Ok(ReducedField {
        vectors,
        geometry: field.geometry,
        projection,
        degenerate,
    })
}
