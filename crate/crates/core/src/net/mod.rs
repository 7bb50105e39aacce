//! Fingerprint CNN: definition, artifact pretraining, Siamese fine-tuning
//! and tiled extraction.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod extract;
pub mod model;
pub mod pairs;
pub mod tensor;
pub mod train;

pub use config::FingerprintNetConfig;
pub use extract::{extract_comprint, Comprint};
pub use model::FingerprintNet;
pub use pairs::{BatchSpec, LabeledImage, PairSampler, PatchPair};
pub use train::{
    artifact_mse, pair_distance, pretrain_artifact_estimator, separation, siamese_finetune, ArtifactSample,
    PretrainOptions, Separation, SiameseOptions, TrainState,
};

/// Builds a deterministically initialized network.
pub fn make_model(config: FingerprintNetConfig, seed: u64) -> crate::Result<FingerprintNet> {
    FingerprintNet::new(config, seed)
}
