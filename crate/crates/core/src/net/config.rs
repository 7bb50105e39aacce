use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the fingerprint network: a stride-1 stack of `depth` conv
/// layers, `width` channels each, single-channel in and out.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FingerprintNetConfig {
    pub depth: usize,
    pub width: usize,
    pub kernel: usize,
    /// Batch normalization on the hidden layers.
    pub batch_norm: bool,
    /// `true`: the stack predicts the artifact plane directly.
    /// `false`: the stack predicts the clean plane and the head returns
    /// `input - stack(input)`.
    pub residual_head: bool,
}

impl Default for FingerprintNetConfig {
    fn default() -> Self {
        Self {
            depth: 17,
            width: 64,
            kernel: 3,
            batch_norm: true,
            residual_head: true,
        }
    }
}

impl FingerprintNetConfig {
    pub fn small(depth: usize, width: usize) -> Self {
        Self {
            depth,
            width,
            kernel: 3,
            batch_norm: false,
            residual_head: true,
        }
    }

    pub fn receptive_field(&self) -> usize {
        self.depth * (self.kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("network depth {} < 2", self.depth)));
        }
        if self.width == 0 {
            return Err(Error::Config("network width must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {} must be odd and positive",
                self.kernel
            )));
        }
        Ok(())
    }
}
