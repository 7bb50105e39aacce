use std::path::PathBuf;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint;
use super::model::FingerprintNet;
use super::pairs::{PatchPair, BLOCK};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::{par, seed};

/// A compressed image with its pre-compression original; the artifact
/// target is `compressed - original` in normalized units.
#[derive(Clone, Debug)]
pub struct ArtifactSample {
    pub id: String,
    pub compressed: Array2<u8>,
    pub original: Array2<u8>,
}

impl ArtifactSample {
    pub fn new(id: impl Into<String>, compressed: Array2<u8>, original: Array2<u8>) -> Result<Self> {
        let id = id.into();
        if compressed.dim() != original.dim() {
            return Err(Error::Data(format!(
                "{id}: compressed {:?} and original {:?} differ in shape",
                compressed.dim(),
                original.dim()
            )));
        }
        Ok(Self {
            id,
            compressed,
            original,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed pretraining epochs.
    pub epoch: usize,
    /// Completed fine-tuning steps.
    pub step: usize,
    /// Best validation artifact MSE.
    pub pretrain_loss: Option<f64>,
    /// Mean contrastive loss over the last fine-tuning batches.
    pub siamese_loss: Option<f64>,
    /// Validation metric of the untouched model.
    pub initial_val: Option<f64>,
    /// Validation metric after each epoch / evaluation.
    pub val_history: Vec<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch: usize,
    pub patches_per_image: usize,
    pub lr: f32,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            patch: 48,
            patches_per_image: 8,
            lr: 1e-4,
            patience: 5,
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseOptions {
    pub steps: usize,
    pub margin: f64,
    pub lr: f32,
    pub pairs_per_batch: usize,
    /// Steps between validations; the best-separating weights are kept.
    pub eval_every: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SiameseOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            margin: 1.0,
            lr: 1e-5,
            pairs_per_batch: 64,
            eval_every: 100,
            seed: 0,
            checkpoint: None,
        }
    }
}

fn check_finite(stage: &'static str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { stage, step, loss })
    }
}

/// Mean squared error between the model output and the artifact plane over
/// every pixel of every sample.
pub fn artifact_mse(model: &FingerprintNet, samples: &[ArtifactSample]) -> f64 {
    let per = par::map(samples, |s| {
        let out = model.apply_plane(&s.compressed);
        let norm = model.normalization.scale;
        let sum: f64 = out
            .iter()
            .zip(s.compressed.iter().zip(s.original.iter()))
            .map(|(o, (&c, &r))| {
                let target = (f32::from(c) - f32::from(r)) * norm;
                f64::from(o - target).powi(2)
            })
            .sum();
        (sum, out.len())
    });
    let (sum, n) = per.into_iter().fold((0.0, 0usize), |(a, b), (s, c)| (a + s, b + c));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn crop_offsets<R: Rng>(rng: &mut R, dim: (usize, usize), patch: usize) -> (usize, usize) {
    let (h, w) = dim;
    (
        BLOCK * rng.random_range(0..=(h - patch) / BLOCK),
        BLOCK * rng.random_range(0..=(w - patch) / BLOCK),
    )
}

/// Trains the network to regress JPEG artifacts, keeping the weights with
/// the best validation MSE.
pub fn pretrain_artifact_estimator(
    model: &mut FingerprintNet,
    train_set: &[ArtifactSample],
    val_set: &[ArtifactSample],
    opts: &PretrainOptions,
    model_tag: &str,
) -> Result<TrainState> {
    if opts.batch_size == 0 || opts.patch == 0 {
        return Err(Error::Config("batch size and patch size must be positive".into()));
    }
    for s in train_set {
        let (h, w) = s.compressed.dim();
        if h < opts.patch || w < opts.patch {
            return Err(Error::Data(format!("{} is smaller than the training patch", s.id)));
        }
    }
    let initial = artifact_mse(model, val_set);
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        pretrain_loss: Some(initial),
        siamese_loss: None,
        initial_val: Some(initial),
        val_history: Vec::new(),
        checkpoint_path: None,
        rng_seed: opts.seed,
    };
    if opts.epochs == 0 || train_set.is_empty() {
        return Ok(state);
    }

    let mut rng = seed::rng_for(opts.seed, "pretrain");
    let mut adam = Adam::new(opts.lr);
    // the untrained weights never win: a zero head would stall fine-tuning
    let mut best: Option<(f64, FingerprintNet)> = None;
    let mut stale = 0;
    let p = opts.patch;
    let norm = model.normalization.scale;
    for epoch in 0..opts.epochs {
        let mut crops: Vec<(usize, usize, usize)> = Vec::new();
        for (i, s) in train_set.iter().enumerate() {
            for _ in 0..opts.patches_per_image.max(1) {
                let (y, x) = crop_offsets(&mut rng, s.compressed.dim(), p);
                crops.push((i, y, x));
            }
        }
        crops.shuffle(&mut rng);
        for batch in crops.chunks(opts.batch_size) {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len() * p * p);
            for &(i, y, x) in batch {
                let c = train_set[i].compressed.slice(s![y..y + p, x..x + p]);
                let o = train_set[i].original.slice(s![y..y + p, x..x + p]);
                inputs.push(c.iter().map(|&v| model.normalization.apply(v)).collect::<Vec<f32>>());
                targets.extend(c.iter().zip(o.iter()).map(|(&a, &b)| (f32::from(a) - f32::from(b)) * norm));
            }
            let x = Tensor::from_planes(&inputs, p, p);
            let (out, cache) = model.forward_train(&x);
            let count = out.data.len() as f64;
            let mut grad = Tensor::zeros(out.n, 1, p, p);
            let mut loss = 0.0f64;
            for ((g, o), t) in grad.data.iter_mut().zip(&out.data).zip(&targets) {
                let d = o - t;
                loss += f64::from(d) * f64::from(d);
                *g = (2.0 * f64::from(d) / count) as f32;
            }
            loss /= count;
            check_finite("pretraining", state.step, loss)?;
            let grads = model.backward(&cache, &grad);
            adam.step(model.params_mut(), &grads);
            state.step += 1;
        }
        let val = artifact_mse(model, val_set);
        check_finite("pretraining validation", epoch, val)?;
        state.epoch = epoch + 1;
        state.val_history.push(val);
        log::debug!("{model_tag} pretrain epoch {} val mse {val:.6e}", epoch + 1);
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > opts.patience {
                break;
            }
        }
    }
    let (best_val, best_model) = best.expect("at least one epoch ran");
    *model = best_model;
    state.pretrain_loss = Some(best_val);
    if let Some(path) = &opts.checkpoint {
        checkpoint::save(model, model_tag, path)?;
        state.checkpoint_path = Some(path.clone());
    }
    Ok(state)
}

/// Mean squared difference between the two fingerprint planes of a pair.
pub fn pair_distance(model: &FingerprintNet, pair: &PatchPair) -> f64 {
    let a = model.apply_plane(&pair.patch_a);
    let b = model.apply_plane(&pair.patch_b);
    a.iter().zip(b.iter()).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub mean_positive: f64,
    pub mean_negative: f64,
}

impl Separation {
    /// Scale-free: `(neg - pos) / (neg + pos)`.
    pub fn score(&self) -> f64 {
        let total = self.mean_negative + self.mean_positive;
        if total <= 0.0 {
            0.0
        } else {
            (self.mean_negative - self.mean_positive) / total
        }
    }
}

pub fn separation(model: &FingerprintNet, pairs: &[PatchPair]) -> Separation {
    let d = par::map(pairs, |p| (p.same_compression, pair_distance(model, p)));
    let mean = |want: bool| {
        let v: Vec<f64> = d.iter().filter(|(s, _)| *s == want).map(|(_, x)| *x).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Separation {
        mean_positive: mean(true),
        mean_negative: mean(false),
    }
}

/// Contrastive fine-tuning: positives pull their mean squared fingerprint
/// distance to zero, negatives push it up to `margin`.
pub fn siamese_finetune<I>(
    model: &mut FingerprintNet,
    pairs: &mut I,
    val_pairs: &[PatchPair],
    opts: &SiameseOptions,
    model_tag: &str,
) -> Result<TrainState>
where
    I: Iterator<Item = PatchPair>,
{
    if opts.margin <= 0.0 || !opts.margin.is_finite() {
        return Err(Error::Config(format!("contrastive margin must be positive, got {}", opts.margin)));
    }
    if opts.pairs_per_batch == 0 {
        return Err(Error::Config("pairs_per_batch must be positive".into()));
    }
    let initial = (!val_pairs.is_empty()).then(|| separation(model, val_pairs).score());
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        pretrain_loss: None,
        siamese_loss: None,
        initial_val: initial,
        val_history: Vec::new(),
        checkpoint_path: None,
        rng_seed: opts.seed,
    };
    if opts.steps == 0 {
        return Ok(state);
    }

    let mut adam = Adam::new(opts.lr);
    let mut best = (initial.unwrap_or(f64::NEG_INFINITY), model.clone());
    let mut recent = Vec::new();
    for step in 0..opts.steps {
        let batch: Vec<PatchPair> = pairs.by_ref().take(opts.pairs_per_batch).collect();
        if batch.is_empty() {
            return Err(Error::Data("pair stream ended early".into()));
        }
        let (h, w) = batch[0].patch_a.dim();
        let mut planes = Vec::with_capacity(2 * batch.len());
        for p in &batch {
            planes.push(model.normalize_plane(&p.patch_a));
            planes.push(model.normalize_plane(&p.patch_b));
        }
        let x = Tensor::from_planes(&planes, h, w);
        let (out, cache) = model.forward_train(&x);
        let hw = h * w;
        let np = batch.len() as f64;
        let mut grad = Tensor::zeros(out.n, 1, h, w);
        let mut loss = 0.0;
        for (i, p) in batch.iter().enumerate() {
            let a = &out.data[2 * i * hw..(2 * i + 1) * hw];
            let b = &out.data[(2 * i + 1) * hw..(2 * i + 2) * hw];
            let dist = a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>() / hw as f64;
            let sign = if p.same_compression {
                loss += dist;
                1.0
            } else if dist < opts.margin {
                loss += opts.margin - dist;
                -1.0
            } else {
                0.0
            };
            if sign != 0.0 {
                let k = sign * 2.0 / (hw as f64 * np);
                let (ga, gb) = grad.data[2 * i * hw..(2 * i + 2) * hw].split_at_mut(hw);
                for j in 0..hw {
                    let d = f64::from(a[j] - b[j]);
                    ga[j] = (k * d) as f32;
                    gb[j] = (-k * d) as f32;
                }
            }
        }
        loss /= np;
        check_finite("siamese fine-tuning", step, loss)?;
        let grads = model.backward(&cache, &grad);
        adam.step(model.params_mut(), &grads);
        state.step = step + 1;
        recent.push(loss);
        if recent.len() > 20 {
            recent.remove(0);
        }

        let last = step + 1 == opts.steps;
        if !val_pairs.is_empty() && ((step + 1) % opts.eval_every.max(1) == 0 || last) {
            let score = separation(model, val_pairs).score();
            state.val_history.push(score);
            log::debug!("{model_tag} siamese step {} loss {loss:.4e} separation {score:.4}", step + 1);
            if score > best.0 {
                best = (score, model.clone());
            }
        }
    }
    if !val_pairs.is_empty() {
        *model = best.1;
    }
    state.siamese_loss = Some(recent.iter().sum::<f64>() / recent.len() as f64);
    if let Some(path) = &opts.checkpoint {
        checkpoint::save(model, model_tag, path)?;
        state.checkpoint_path = Some(path.clone());
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compress_chain, synth, CompressionChain};
    use crate::net::config::FingerprintNetConfig;

    fn samples(n: usize, qf: u8, size: usize, offset: u64) -> Vec<ArtifactSample> {
        (0..n)
            .map(|i| {
                let orig = synth::natural_gray((size, size), offset + i as u64);
                let (c, _) = compress_chain(&orig, &CompressionChain::jpeg([qf])).unwrap();
                ArtifactSample::new(format!("s{i}"), c, orig).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_head_reaches_zero_loss_on_lossless_pairs() {
        let mut model = FingerprintNet::new(FingerprintNetConfig::small(3, 4), 1).unwrap();
        let last = model.layers.last_mut().unwrap();
        last.conv.weight.fill(0.0);
        last.conv.bias.as_mut().unwrap().fill(0.0);
        let img = synth::natural_gray((32, 32), 2);
        let s = ArtifactSample::new("x", img.clone(), img).unwrap();
        assert_eq!(artifact_mse(&model, &[s]), 0.0);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let mut model = FingerprintNet::new(FingerprintNetConfig::small(3, 4), 1).unwrap();
        let before = model.clone();
        let opts = PretrainOptions {
            epochs: 0,
            checkpoint: Some(ckpt.clone()),
            ..PretrainOptions::default()
        };
        let set = samples(2, 50, 48, 0);
        let state = pretrain_artifact_estimator(&mut model, &set, &set, &opts, "t").unwrap();
        assert_eq!(model, before);
        assert_eq!(state.epoch, 0);
        assert!(state.checkpoint_path.is_none());
        assert!(!ckpt.exists());
    }

    #[test]
    fn mismatched_original_is_a_data_error() {
        let a = synth::natural_gray((16, 16), 1);
        let b = synth::natural_gray((16, 24), 1);
        assert!(matches!(ArtifactSample::new("x", a, b), Err(Error::Data(_))));
    }

    #[test]
    fn pretraining_lowers_validation_mse() {
        let train = samples(6, 50, 48, 10);
        let val = samples(2, 50, 48, 100);
        let mut model = FingerprintNet::new(FingerprintNetConfig::small(3, 4), 2).unwrap();
        let opts = PretrainOptions {
            epochs: 10,
            batch_size: 8,
            patch: 24,
            patches_per_image: 8,
            lr: 3e-3,
            patience: 10,
            seed: 3,
            checkpoint: None,
        };
        let state = pretrain_artifact_estimator(&mut model, &train, &val, &opts, "t").unwrap();
        assert!(state.pretrain_loss.unwrap() < state.initial_val.unwrap());
        assert!((artifact_mse(&model, &val) - state.pretrain_loss.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_patches_have_zero_distance() {
        let model = FingerprintNet::new(FingerprintNetConfig::small(3, 4), 1).unwrap();
        let img = synth::natural_gray((24, 24), 3);
        let c = CompressionChain::jpeg([60]);
        let p = PatchPair::new(img.clone(), c.clone(), img, c);
        assert_eq!(pair_distance(&model, &p), 0.0);
    }

    #[test]
    fn zero_steps_and_bad_margin() {
        let mut model = FingerprintNet::new(FingerprintNetConfig::small(3, 4), 1).unwrap();
        let before = model.clone();
        let mut empty = std::iter::empty();
        let opts = SiameseOptions {
            steps: 0,
            ..SiameseOptions::default()
        };
        siamese_finetune(&mut model, &mut empty, &[], &opts, "t").unwrap();
        assert_eq!(model, before);
        let bad = SiameseOptions {
            margin: 0.0,
            ..SiameseOptions::default()
        };
        assert!(matches!(
            siamese_finetune(&mut model, &mut std::iter::empty(), &[], &bad, "t"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = FingerprintNet::new(FingerprintNetConfig::small(2, 2), 1).unwrap();
        model.layers.last_mut().unwrap().conv.bias.as_mut().unwrap()[0] = f32::NAN;
        let set = samples(2, 50, 32, 0);
        let opts = PretrainOptions {
            epochs: 1,
            batch_size: 2,
            patch: 16,
            patches_per_image: 1,
            ..PretrainOptions::default()
        };
        assert!(matches!(
            pretrain_artifact_estimator(&mut model, &set, &set, &opts, "t"),
            Err(Error::Diverged { .. })
        ));
    }
}
