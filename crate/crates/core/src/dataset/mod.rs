//! Corpus ingestion, compression recipes and composite test images.

pub mod chain;
pub mod codec;
pub mod forge;
pub mod manifest;
pub mod preprocess;
pub mod synth;

pub use chain::{
    CompositeSpec, CompressionChain, RecipeName, TrainingRecipe, Variant, LEFT_QFS, QF_PAIR_GAP,
    RECOMPRESSION_QFS,
};
pub use codec::{compress_chain, GrayPlane};
pub use forge::{
    build_composite, build_test_suite, build_training_set, ingest_corpus, Composite, IngestOptions,
    SplitSizes,
};
pub use manifest::{DatasetManifest, EntryKind, ManifestEntry, Role};
pub use preprocess::{preprocess, SourceImage};
