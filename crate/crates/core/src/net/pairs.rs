use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::CompressionChain;
use crate::error::{Error, Result};
use crate::seed;

/// JPEG block size; patch offsets are multiples of it so every patch sees
/// the same block phase.
pub const BLOCK: usize = 8;

/// A training image labelled with its full compression history.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: Array2<u8>,
    pub chain: CompressionChain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub patch_a: Array2<u8>,
    pub patch_b: Array2<u8>,
    pub same_compression: bool,
    pub chain_a: CompressionChain,
    pub chain_b: CompressionChain,
}

impl PatchPair {
    /// Builds a pair; the label follows from exact chain equality.
    pub fn new(
        patch_a: Array2<u8>,
        chain_a: CompressionChain,
        patch_b: Array2<u8>,
        chain_b: CompressionChain,
    ) -> Self {
        Self {
            same_compression: chain_a == chain_b,
            patch_a,
            patch_b,
            chain_a,
            chain_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchSpec {
    pub pairs_per_batch: usize,
    pub positive_fraction: f64,
    pub patch: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            pairs_per_batch: 64,
            positive_fraction: 0.5,
            patch: 48,
        }
    }
}

/// Infinite, seed-determined stream of labelled patch pairs. Every batch of
/// `pairs_per_batch` consecutive pairs holds exactly
/// `round(positive_fraction * pairs_per_batch)` positives in shuffled order.
pub struct PairSampler<'a> {
    images: &'a [LabeledImage],
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    spec: BatchSpec,
    rng: ChaCha8Rng,
    pending: Vec<PatchPair>,
}

impl<'a> PairSampler<'a> {
    pub fn new(images: &'a [LabeledImage], spec: BatchSpec, seed_value: u64) -> Result<Self> {
        if spec.pairs_per_batch == 0 {
            return Err(Error::Config("pairs_per_batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&spec.positive_fraction) {
            return Err(Error::Config(format!(
                "positive fraction {} outside [0, 1]",
                spec.positive_fraction
            )));
        }
        let mut by_chain: BTreeMap<&CompressionChain, Vec<usize>> = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            let (h, w) = img.pixels.dim();
            if h < spec.patch || w < spec.patch {
                return Err(Error::Data(format!(
                    "image {} ({h}x{w}) is smaller than the {p}x{p} patch",
                    img.id,
                    p = spec.patch
                )));
            }
            by_chain.entry(&img.chain).or_default().push(i);
        }
        if by_chain.len() < 2 {
            return Err(Error::Data(format!(
                "need at least two distinct compression chains to form negative pairs, found {}",
                by_chain.len()
            )));
        }
        let groups: Vec<Vec<usize>> = by_chain.into_values().collect();
        let mut group_of = vec![0; images.len()];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                group_of[i] = g;
            }
        }
        Ok(Self {
            images,
            groups,
            group_of,
            spec,
            rng: seed::rng_for(seed_value, "pair-sampler"),
            pending: Vec::new(),
        })
    }

    pub fn distinct_chains(&self) -> usize {
        self.groups.len()
    }

    fn patch(&mut self, img: usize) -> Array2<u8> {
        let px = &self.images[img].pixels;
        let p = self.spec.patch;
        let (h, w) = px.dim();
        let y = BLOCK * self.rng.random_range(0..=(h - p) / BLOCK);
        let x = BLOCK * self.rng.random_range(0..=(w - p) / BLOCK);
        px.slice(s![y..y + p, x..x + p]).to_owned()
    }

    fn draw(&mut self, positive: bool) -> PatchPair {
        let a = self.rng.random_range(0..self.images.len());
        let ga = self.group_of[a];
        let b = if positive {
            let members = &self.groups[ga];
            members[self.rng.random_range(0..members.len())]
        } else {
            let others = self.images.len() - self.groups[ga].len();
            let mut k = self.rng.random_range(0..others);
            let mut pick = 0;
            for (g, members) in self.groups.iter().enumerate() {
                if g == ga {
                    continue;
                }
                if k < members.len() {
                    pick = members[k];
                    break;
                }
                k -= members.len();
            }
            pick
        };
        let pa = self.patch(a);
        let pb = self.patch(b);
        PatchPair::new(
            pa,
            self.images[a].chain.clone(),
            pb,
            self.images[b].chain.clone(),
        )
    }

    fn refill(&mut self) {
        let n = self.spec.pairs_per_batch;
        let positives = (self.spec.positive_fraction * n as f64).round() as usize;
        let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
        labels.shuffle(&mut self.rng);
        let mut batch: Vec<PatchPair> = labels.into_iter().map(|pos| self.draw(pos)).collect();
        batch.reverse();
        self.pending = batch;
    }

    pub fn next_batch(&mut self) -> Vec<PatchPair> {
        (0..self.spec.pairs_per_batch).filter_map(|_| self.next()).collect()
    }
}

impl Iterator for PairSampler<'_> {
    type Item = PatchPair;

    fn next(&mut self) -> Option<PatchPair> {
        if self.pending.is_empty() {
            self.refill();
        }
        self.pending.pop()
    }
}
