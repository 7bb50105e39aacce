use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chain::{CompositeSpec, CompressionChain};
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryKind {
    /// Preprocessed, never-compressed source image.
    Source { origin: String },
    /// Training/validation image; `original` points at its source PNG.
    Chain {
        chain: CompressionChain,
        original: String,
    },
    /// Composite test image; `mask` is a PNG with the right half at 255.
    Composite { spec: CompositeSpec, mask: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub source_id: String,
    #[serde(flatten)]
    pub kind: EntryKind,
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    /// Hex SHA-256 of the file at `path`.
    pub checksum: String,
}

impl ManifestEntry {
    pub fn chain(&self) -> Option<&CompressionChain> {
        match &self.kind {
            EntryKind::Chain { chain, .. } => Some(chain),
            _ => None,
        }
    }

    pub fn composite(&self) -> Option<&CompositeSpec> {
        match &self.kind {
            EntryKind::Composite { spec, .. } => Some(spec),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub recipe_name: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(recipe_name: impl Into<String>, seed: u64) -> Self {
        Self {
            recipe_name: recipe_name.into(),
            seed,
            entries: Vec::new(),
        }
    }

    pub fn role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks ids are unique and every checksum matches the file on disk.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate manifest id '{}'", e.id)));
            }
            let path = root.join(&e.path);
            let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let sum = sha256_hex(&bytes);
            if sum != e.checksum {
                return Err(Error::Data(format!(
                    "checksum mismatch for {}: manifest {}, file {}",
                    e.path, e.checksum, sum
                )));
            }
        }
        Ok(())
    }
}

/// Writes `bytes` under `root/rel` and returns the checksum.
pub(crate) fn write_artifact(root: &Path, rel: &str, bytes: &[u8]) -> Result<String> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(sha256_hex(bytes))
}
