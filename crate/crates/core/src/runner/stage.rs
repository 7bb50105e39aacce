use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Dataset,
    Train,
    Extract,
    Localize,
    Evaluate,
    Plot,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Dataset,
        Stage::Train,
        Stage::Extract,
        Stage::Localize,
        Stage::Evaluate,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Localize => "localize",
            Stage::Evaluate => "evaluate",
            Stage::Plot => "plot",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

pub const MARKER: &str = ".stage.json";

/// Written last into a stage directory; its presence means the stage
/// completed with the recorded hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: Stage,
    pub hash: String,
    /// Relative artifact path to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl StageMarker {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MARKER);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MARKER);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_names() {
        assert_eq!(Stage::Dataset.upstream(), None);
        assert_eq!(Stage::Evaluate.upstream(), Some(Stage::Localize));
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bake".parse::<Stage>().is_err());
    }
}
