//! Config-driven experiment runs: stage hashing and caching, result
//! tables, figures and trend checks.

mod config;
mod pipeline;
mod plot;
mod stage;
mod trends;

pub use config::{DatasetSection, EvaluationSection, ExperimentConfig, ModelSection, PretrainSection, Profile, SiameseSection};
pub use pipeline::{
    config_hash, default_out, finetune_recipe, load_grid, load_heatmap, pretrain_recipe, run_pipeline, runs_root, stage_hashes, RunOptions, RunRecord,
    StageRecord, StageStatus, GRID_JSON, GRID_TABLE, RESOLVED_CONFIG, RESULTS_TABLE, RUNS_ENV, RUN_LOG, RUN_MANIFEST,
};
pub use plot::{matrix_rows, plot_qf_curves, plot_recompression_matrix};
pub use stage::{Stage, StageMarker};
pub use trends::{compare_trends, spearman, Claim, TrendReport, Verdict};
