use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Left-half QFs of the composite test images: 20, 25, ..., 90.
pub const LEFT_QFS: [u8; 15] = [20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90];
/// Whole-image recompression QFs applied to composites.
pub const RECOMPRESSION_QFS: [u8; 7] = [50, 60, 70, 80, 90, 95, 100];
/// Right half QF = left half QF + this.
pub const QF_PAIR_GAP: u8 = 10;

/// Ordered JPEG quality factors applied to an image, optionally followed by
/// a lossless save.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompressionChain {
    pub steps: Vec<u8>,
    pub final_lossless: bool,
}

impl CompressionChain {
    pub fn jpeg(steps: impl Into<Vec<u8>>) -> Self {
        Self {
            steps: steps.into(),
            final_lossless: false,
        }
    }

    /// Never JPEG-coded, saved losslessly.
    pub fn pristine() -> Self {
        Self {
            steps: Vec::new(),
            final_lossless: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() && !self.final_lossless {
            return Err(Error::Config(
                "compression chain has no steps and no lossless save".into(),
            ));
        }
        if let Some(&qf) = self.steps.iter().find(|&&q| !(1..=100).contains(&q)) {
            return Err(Error::Config(format!("invalid JPEG quality factor {qf}")));
        }
        Ok(())
    }

    pub fn is_recompressed(&self) -> bool {
        self.steps.len() > 1
    }
}

impl fmt::Display for CompressionChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self.steps.iter().map(|q| q.to_string()).collect();
        write!(f, "[{}]", steps.join(">"))?;
        if self.final_lossless {
            write!(f, "+png")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeName {
    HighQf,
    WideQf,
    HighQfRec,
}

impl RecipeName {
    pub const ALL: [RecipeName; 3] = [RecipeName::HighQf, RecipeName::WideQf, RecipeName::HighQfRec];

    /// Lowercase identifier used on the command line and in paths.
    pub fn slug(self) -> &'static str {
        match self {
            RecipeName::HighQf => "highqf",
            RecipeName::WideQf => "wideqf",
            RecipeName::HighQfRec => "highqfrec",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            RecipeName::HighQf => "HighQF",
            RecipeName::WideQf => "WideQF",
            RecipeName::HighQfRec => "HighQFRec",
        }
    }
}

impl fmt::Display for RecipeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for RecipeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "highqf" => Ok(RecipeName::HighQf),
            "wideqf" => Ok(RecipeName::WideQf),
            "highqfrec" => Ok(RecipeName::HighQfRec),
            other => Err(Error::Config(format!(
                "unknown recipe '{other}' (expected highqf, wideqf or highqfrec)"
            ))),
        }
    }
}

/// How training images are compressed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub name: String,
    pub first_qfs: Vec<u8>,
    pub recompression_qfs: Vec<u8>,
    pub recompression_probability: f64,
}

impl TrainingRecipe {
    pub fn preset(name: RecipeName) -> Self {
        const HIGH: [u8; 7] = [50, 55, 60, 65, 70, 80, 90];
        const WIDE: [u8; 10] = [20, 25, 30, 35, 40, 50, 60, 70, 80, 90];
        let (first, rec, p): (&[u8], &[u8], f64) = match name {
            RecipeName::HighQf => (&HIGH, &[], 0.0),
            RecipeName::WideQf => (&WIDE, &[], 0.0),
            RecipeName::HighQfRec => (&HIGH, &HIGH, 0.5),
        };
        Self {
            name: name.display_name().to_string(),
            first_qfs: first.to_vec(),
            recompression_qfs: rec.to_vec(),
            recompression_probability: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_qfs.is_empty() {
            return Err(Error::Config(format!("recipe {}: empty QF set", self.name)));
        }
        if !(0.0..=1.0).contains(&self.recompression_probability) {
            return Err(Error::Config(format!(
                "recipe {}: recompression probability {} outside [0, 1]",
                self.name, self.recompression_probability
            )));
        }
        if self.recompression_probability > 0.0 && self.recompression_qfs.is_empty() {
            return Err(Error::Config(format!(
                "recipe {}: recompression probability is {} but no recompression QFs are given",
                self.name, self.recompression_probability
            )));
        }
        for &qf in self.first_qfs.iter().chain(&self.recompression_qfs) {
            if !(1..=100).contains(&qf) {
                return Err(Error::Config(format!(
                    "recipe {}: invalid quality factor {qf}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Draws one chain: a uniform first QF, then with the recipe's
    /// probability a uniform recompression QF.
    pub fn draw_chain<R: Rng + ?Sized>(&self, rng: &mut R) -> CompressionChain {
        let mut steps = vec![*self.first_qfs.choose(rng).expect("validated non-empty")];
        // always consume the coin so chains stay aligned across recipes
        let coin: f64 = rng.random();
        if coin < self.recompression_probability {
            steps.push(*self.recompression_qfs.choose(rng).expect("validated non-empty"));
        }
        CompressionChain::jpeg(steps)
    }
}

/// One composite test image: left half at `left_qf`, right half at
/// `right_qf`, optionally recompressed as a whole.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub left_qf: u8,
    pub right_qf: u8,
    pub recompress_qf: Option<u8>,
    pub source_id: String,
}

impl CompositeSpec {
    pub fn new(source_id: impl Into<String>, left_qf: u8, recompress_qf: Option<u8>) -> Self {
        Self {
            left_qf,
            right_qf: left_qf + QF_PAIR_GAP,
            recompress_qf,
            source_id: source_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !LEFT_QFS.contains(&self.left_qf) {
            return Err(Error::Config(format!(
                "composite left QF {} not in the 20..90 step-5 grid",
                self.left_qf
            )));
        }
        if self.right_qf != self.left_qf + QF_PAIR_GAP {
            return Err(Error::Config(format!(
                "composite right QF {} must be left QF {} + {QF_PAIR_GAP}",
                self.right_qf, self.left_qf
            )));
        }
        if let Some(r) = self.recompress_qf {
            if !RECOMPRESSION_QFS.contains(&r) {
                return Err(Error::Config(format!("recompression QF {r} not in the test grid")));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        match self.recompress_qf {
            None => Variant::Lossless,
            Some(q) => Variant::Recompressed(q),
        }
    }
}

/// The saved form of a composite: lossless PNG or whole-image JPEG
/// recompression at a given QF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Lossless,
    Recompressed(u8),
}

impl Variant {
    /// Lossless first, then the recompression QFs ascending.
    pub fn all() -> Vec<Variant> {
        std::iter::once(Variant::Lossless)
            .chain(RECOMPRESSION_QFS.iter().map(|&q| Variant::Recompressed(q)))
            .collect()
    }

    pub fn recompress_qf(self) -> Option<u8> {
        match self {
            Variant::Lossless => None,
            Variant::Recompressed(q) => Some(q),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Lossless => f.write_str("lossless"),
            Variant::Recompressed(q) => write!(f, "rec{q}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lossless" {
            return Ok(Variant::Lossless);
        }
        s.strip_prefix("rec")
            .and_then(|q| q.parse::<u8>().ok())
            .map(Variant::Recompressed)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn presets_match_recipe_sets() {
        let high = TrainingRecipe::preset(RecipeName::HighQf);
        assert_eq!(high.first_qfs, vec![50, 55, 60, 65, 70, 80, 90]);
        assert!(high.recompression_qfs.is_empty());
        assert_eq!(high.recompression_probability, 0.0);

        let wide = TrainingRecipe::preset(RecipeName::WideQf);
        assert_eq!(wide.first_qfs, vec![20, 25, 30, 35, 40, 50, 60, 70, 80, 90]);
        assert!(wide.first_qfs.iter().any(|q| !high.first_qfs.contains(q)));

        let rec = TrainingRecipe::preset(RecipeName::HighQfRec);
        assert_eq!(rec.first_qfs, high.first_qfs);
        assert_eq!(rec.recompression_qfs, high.first_qfs);
        assert_eq!(rec.recompression_probability, 0.5);
    }

    #[test]
    fn probability_without_qfs_is_rejected() {
        let mut r = TrainingRecipe::preset(RecipeName::HighQf);
        r.recompression_probability = 0.3;
        assert!(matches!(r.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_probability_never_recompresses() {
        let r = TrainingRecipe::preset(RecipeName::WideQf);
        let mut rng = seed::rng(5);
        assert!((0..2000).all(|_| r.draw_chain(&mut rng).steps.len() == 1));
    }

    #[test]
    fn chain_validation() {
        assert!(CompressionChain::jpeg([50]).validate().is_ok());
        assert!(CompressionChain::pristine().validate().is_ok());
        assert!(CompressionChain::jpeg([0]).validate().is_err());
        assert!(CompressionChain::jpeg([101]).validate().is_err());
        assert!(CompressionChain::jpeg(Vec::new()).validate().is_err());
    }

    #[test]
    fn composite_right_qf_is_ten_higher() {
        let s = CompositeSpec::new("a", 20, None);
        assert_eq!(s.right_qf, 30);
        let s = CompositeSpec::new("a", 90, Some(95));
        assert_eq!(s.right_qf, 100);
        assert!(s.validate().is_ok());
        assert!(CompositeSpec::new("a", 21, None).validate().is_err());
        assert!(CompositeSpec::new("a", 50, Some(85)).validate().is_err());
    }

    #[test]
    fn variant_text_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::all().len(), 8);
    }
}
