use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient images: need {need}, have {have}")]
    InsufficientImages { need: usize, have: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("{stage} diverged at step {step}: loss is {loss}")]
    Diverged {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("missing artifact for stage '{needed}': run '{needed}' first")]
    MissingStage { needed: String },

    #[error("cached artifacts in {path} were produced with a different configuration (hash {found}, expected {expected}); rerun with --force to rebuild")]
    CacheMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("array file error: {0}")]
    Npy(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Process exit code for the CLI: 1 configuration, 2 missing dependency
    /// artifact, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::CacheMismatch { .. } => 1,
            Error::MissingStage { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
