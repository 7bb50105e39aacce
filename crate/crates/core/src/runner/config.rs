use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{RecipeName, SplitSizes};
use crate::error::{Error, Result};
use crate::localization::LocalizationParams;
use crate::metrics::Pooling;
use crate::net::FingerprintNetConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    #[default]
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile '{s}' (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Directory of source images; a procedural corpus is generated when unset.
    pub corpus: Option<PathBuf>,
    /// Side of generated corpus images.
    pub synthetic_size: usize,
    pub splits: SplitSizes,
    pub train_size: [usize; 2],
    pub test_size: [usize; 2],
    pub recipes: Vec<RecipeName>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch: usize,
    pub patches_per_image: usize,
    pub lr: f32,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiameseSection {
    pub steps: usize,
    pub margin: f64,
    pub lr: f32,
    pub pairs_per_batch: usize,
    pub positive_fraction: f64,
    pub patch: usize,
    pub eval_every: usize,
    /// Held-out validation pairs drawn from the validation split.
    pub val_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub net: FingerprintNetConfig,
    pub pretrain: PretrainSection,
    pub siamese: SiameseSection,
    /// Extraction tile side and overlap.
    pub tile: usize,
    pub overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub thresholds: usize,
    pub exhaustive: bool,
    pub pooling: Pooling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub localization: LocalizationParams,
    pub evaluation: EvaluationSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        ExperimentConfig::desk().dataset
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        ExperimentConfig::desk().model.pretrain
    }
}

impl Default for SiameseSection {
    fn default() -> Self {
        ExperimentConfig::desk().model.siamese
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ExperimentConfig::desk().model
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            thresholds: 256,
            exhaustive: false,
            pooling: Pooling::PerImage,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 1000/100/50 splits, 200x200 training and 1000x1000 test images, full
    /// network.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            seed: 0,
            dataset: DatasetSection {
                corpus: None,
                synthetic_size: 1024,
                splits: SplitSizes {
                    train: 1000,
                    val: 100,
                    test: 50,
                },
                train_size: [200, 200],
                test_size: [1000, 1000],
                recipes: RecipeName::ALL.to_vec(),
            },
            model: ModelSection {
                net: FingerprintNetConfig::default(),
                pretrain: PretrainSection {
                    epochs: 50,
                    batch_size: 64,
                    patch: 48,
                    patches_per_image: 8,
                    lr: 1e-4,
                    patience: 5,
                },
                siamese: SiameseSection {
                    steps: 2000,
                    margin: 1.0,
                    lr: 1e-5,
                    pairs_per_batch: 64,
                    positive_fraction: 0.5,
                    patch: 48,
                    eval_every: 100,
                    val_pairs: 512,
                },
                tile: 512,
                overlap: 48,
            },
            localization: LocalizationParams::default(),
            evaluation: EvaluationSection {
                thresholds: 256,
                exhaustive: false,
                pooling: Pooling::PerImage,
            },
        }
    }

    /// 100/10/5 splits, 400x400 test images, small network.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.profile = Profile::Desk;
        c.dataset.synthetic_size = 400;
        c.dataset.splits = SplitSizes {
            train: 100,
            val: 10,
            test: 5,
        };
        c.dataset.test_size = [400, 400];
        c.model.net = FingerprintNetConfig::small(5, 16);
        c.model.pretrain = PretrainSection {
            epochs: 20,
            batch_size: 32,
            patch: 48,
            patches_per_image: 8,
            lr: 1e-3,
            patience: 3,
        };
        c.model.siamese = SiameseSection {
            steps: 300,
            margin: 1e-3,
            lr: 1e-4,
            pairs_per_batch: 32,
            positive_fraction: 0.5,
            patch: 48,
            eval_every: 50,
            val_pairs: 64,
        };
        c.model.tile = 400;
        c.model.overlap = 0;
        c.localization.window = 64;
        c
    }

    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Preset for the chosen profile with `overrides` deep-merged on top.
    /// The profile comes from `profile` if given, else from the overrides,
    /// else desk.
    pub fn resolve(overrides: Option<&str>, profile: Option<Profile>) -> Result<Self> {
        let table: toml::Table = match overrides {
            Some(text) => toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?,
            None => toml::Table::new(),
        };
        let from_file = table
            .get("profile")
            .and_then(|v| v.as_str())
            .map(Profile::from_str)
            .transpose()?;
        let profile = profile.or(from_file).unwrap_or_default();
        let mut base = toml::Table::try_from(Self::preset(profile))
            .map_err(|e| Error::Config(format!("preset does not serialize: {e}")))?;
        merge(&mut base, table);
        base.insert("profile".into(), toml::Value::String(profile_str(profile).into()));
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(Some(&text), profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.net.validate()?;
        let d = &self.dataset;
        if d.recipes.is_empty() {
            return Err(Error::Config("at least one training recipe is required".into()));
        }
        if d.splits.train == 0 || d.splits.val == 0 {
            return Err(Error::Config("train and val splits must be non-empty".into()));
        }
        if d.test_size[1] % 2 != 0 {
            return Err(Error::Config(format!("test width {} must be even", d.test_size[1])));
        }
        let l = &self.localization;
        if l.window > d.test_size[0].min(d.test_size[1]) {
            return Err(Error::Config(format!(
                "localization window {} exceeds the test size {:?}",
                l.window, d.test_size
            )));
        }
        if l.stride == 0 {
            return Err(Error::Config("localization stride must be positive".into()));
        }
        if self.model.tile <= self.model.overlap {
            return Err(Error::Config("extraction tile must exceed its overlap".into()));
        }
        if self.evaluation.thresholds < 2 {
            return Err(Error::Config("need at least 2 thresholds".into()));
        }
        let m = &self.model;
        for (what, p) in [("pretrain", m.pretrain.patch), ("siamese", m.siamese.patch)] {
            if p == 0 || p > d.train_size[0].min(d.train_size[1]) {
                return Err(Error::Config(format!("{what} patch {p} does not fit the training size")));
            }
        }
        Ok(())
    }
}

fn profile_str(p: Profile) -> &'static str {
    match p {
        Profile::Paper => "paper",
        Profile::Desk => "desk",
    }
}

/// Tables merge key by key; any other value replaces the base.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
