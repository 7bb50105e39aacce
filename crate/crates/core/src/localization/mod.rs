//! Comprint to heatmap: quantized co-occurrence features over sliding
//! windows, per-image PCA, two-component Gaussian-mixture EM.

mod cooccurrence;
mod em;
mod features;
mod heatmap;
mod pca;
mod quantize;

pub use cooccurrence::{compute_cooccurrence, run_code, runs_per_direction, CooccurrenceHistogram, Direction, SymmetryFold};
pub use em::{em_fit, responsibilities, EmOptions, GaussianMixtureState};
pub use features::{build_feature_field, FeatureField, GridGeometry};
pub use heatmap::{heatmap_from_responsibilities, upsample, Heatmap};
pub use pca::{reduce_dimension, Projection, ReducedField};
pub use quantize::{high_pass, quantize_residual, ResidualQuantizer};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::Comprint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationParams {
    /// Comprint standard deviations per quantization level.
    pub step_scale: f64,
    pub truncation: i32,
    pub order: usize,
    pub window: usize,
    pub stride: usize,
    pub dim: usize,
    pub high_pass: bool,
    pub em: EmOptions,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self {
            step_scale: 1.0,
            truncation: 1,
            order: 4,
            window: 128,
            stride: 8,
            dim: 25,
            high_pass: false,
            em: EmOptions::default(),
        }
    }
}

/// Everything the localizer decided for one image, kept as a sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub params: LocalizationParams,
    pub quantization_step: f64,
    pub feature_dim: usize,
    pub grid: GridGeometry,
    pub state: GaussianMixtureState,
    pub projection: Projection,
}

pub fn localize(comprint: &Comprint, params: &LocalizationParams) -> Result<(Heatmap, LocalizationRecord)> {
    let values = if params.high_pass {
        high_pass(&comprint.values)
    } else {
        comprint.values.clone()
    };
    let q = ResidualQuantizer::adaptive(&values, params.truncation, params.step_scale)?;
    let quantized = quantize_residual(&values, &q)?;
    let field = build_feature_field(&quantized, params.truncation, params.window, params.stride, params.order)?;
    let reduced = reduce_dimension(&field, params.dim.min(field.dim()))?;
    let state = em_fit(&reduced.vectors, reduced.degenerate, &params.em)?;
    let heatmap = heatmap_from_responsibilities(
        &state,
        &reduced.vectors,
        &reduced.geometry,
        &comprint.source_id,
        &comprint.model_tag,
    )?;
    let record = LocalizationRecord {
        params: params.clone(),
        quantization_step: q.quantization_step,
        feature_dim: field.dim(),
        grid: field.geometry,
        state,
        projection: reduced.projection,
    };
    Ok((heatmap, record))
}
