//! Heatmap scoring: Matthews correlation maximized over thresholds and
//! polarity, and aggregation over the QF-pair x variant grid.

mod grid;
mod mcc;

pub use grid::{aggregate_grid, read_results_csv, write_results_csv, CellKey, CellStats, EvalRecord, ResultGrid, RESULTS_HEADER};
pub use mcc::{confusion_counts, max_mcc, max_mcc_pooled, mcc, ConfusionCounts, MccCurve, Polarity, ThresholdMode};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Best MCC per image, then averaged per cell.
    #[default]
    PerImage,
    /// One sweep over all pixels of a cell.
    Pooled,
}

impl std::str::FromStr for Pooling {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "per-image" => Ok(Pooling::PerImage),
            "pooled" => Ok(Pooling::Pooled),
            _ => Err(crate::Error::Config(format!("unknown pooling '{s}'"))),
        }
    }
}
