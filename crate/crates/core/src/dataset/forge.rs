use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::chain::{CompositeSpec, CompressionChain, TrainingRecipe, Variant, LEFT_QFS};
use super::codec::{self, GrayPlane};
use super::manifest::{write_artifact, DatasetManifest, EntryKind, ManifestEntry, Role};
use super::preprocess::{preprocess, SourceImage};
use crate::error::{Error, Result};
use crate::{par, seed};

pub const SOURCES_MANIFEST: &str = "sources/manifest.json";
pub const TEST_MANIFEST: &str = "test/manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub splits: SplitSizes,
    pub seed: u64,
    /// (height, width) of training and validation images.
    pub train_size: (usize, usize),
    /// (height, width) of test images.
    pub test_size: (usize, usize),
}

fn is_candidate(path: &Path) -> bool {
    path.is_file()
        && !path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'))
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Draws disjoint train/val/test splits from a corpus directory, converts
/// each chosen image to grayscale at its role's size, and writes the sources
/// under `root/sources/`.
pub fn ingest_corpus(corpus_dir: &Path, root: &Path, opts: &IngestOptions) -> Result<DatasetManifest> {
    let need = opts.splits.total();
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir)
        .map_err(|e| Error::io(corpus_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_candidate(p))
        .collect();
    files.sort();
    if files.len() < need {
        return Err(Error::InsufficientImages {
            need,
            have: files.len(),
        });
    }

    let mut rng = seed::rng(opts.seed);
    files.shuffle(&mut rng);

    let mut chosen = Vec::with_capacity(need);
    let mut ids = std::collections::HashSet::new();
    for (i, path) in files.iter().enumerate() {
        if chosen.len() == need {
            break;
        }
        match image::open(path) {
            Ok(img) => {
                let mut id = image_id(path);
                if !ids.insert(id.clone()) {
                    id = format!("{id}_{i}");
                    ids.insert(id.clone());
                }
                chosen.push((id, path.clone(), img));
            }
            Err(err) => {
                log::warn!("skipping undecodable corpus file {}: {err}", path.display());
                if files.len() - (i + 1) + chosen.len() < need {
                    return Err(Error::InsufficientImages {
                        need,
                        have: files.len() - (i + 1) + chosen.len(),
                    });
                }
            }
        }
    }
    if chosen.len() < need {
        return Err(Error::InsufficientImages {
            need,
            have: chosen.len(),
        });
    }

    let roles: Vec<Role> = std::iter::repeat_n(Role::Train, opts.splits.train)
        .chain(std::iter::repeat_n(Role::Val, opts.splits.val))
        .chain(std::iter::repeat_n(Role::Test, opts.splits.test))
        .collect();

    let jobs: Vec<_> = chosen.into_iter().zip(roles).collect();
    let entries = par::try_map(&jobs, |((id, path, img), role)| {
        let size = if *role == Role::Test { opts.test_size } else { opts.train_size };
        let rel_origin = path
            .strip_prefix(corpus_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        let src = preprocess(id, img, size, &rel_origin)?;
        let rel = format!("sources/{}/{}.png", role, id);
        let checksum = write_artifact(root, &rel, &codec::encode_png(&src.pixels)?)?;
        Ok::<_, Error>(ManifestEntry {
            id: id.clone(),
            role: *role,
            source_id: id.clone(),
            kind: EntryKind::Source { origin: src.origin },
            path: rel,
            checksum,
        })
    })?;

    let mut manifest = DatasetManifest::new("sources", opts.seed);
    manifest.entries = entries;
    manifest.save(&root.join(SOURCES_MANIFEST))?;
    Ok(manifest)
}

/// Loads the source image behind a manifest entry.
pub fn load_source(root: &Path, entry: &ManifestEntry) -> Result<SourceImage> {
    let pixels = codec::read_gray(&root.join(&entry.path))?;
    let origin = match &entry.kind {
        EntryKind::Source { origin } => origin.clone(),
        _ => entry.path.clone(),
    };
    Ok(SourceImage::new(entry.source_id.clone(), pixels, origin))
}

pub fn recipe_slug(recipe: &TrainingRecipe) -> String {
    recipe.name.to_ascii_lowercase()
}

/// Compresses every train/val source with a chain drawn from `recipe`.
/// Chains are fixed here, seeded by (seed, image id).
pub fn build_training_set(
    root: &Path,
    sources: &DatasetManifest,
    recipe: &TrainingRecipe,
    seed_value: u64,
) -> Result<DatasetManifest> {
    recipe.validate()?;
    let slug = recipe_slug(recipe);
    let jobs: Vec<&ManifestEntry> = sources
        .entries
        .iter()
        .filter(|e| matches!(e.kind, EntryKind::Source { .. }) && e.role != Role::Test)
        .collect();
    let entries = par::try_map(&jobs, |entry| {
        let mut rng = seed::rng_for(seed_value, &entry.id);
        let chain = recipe.draw_chain(&mut rng);
        let src = load_source(root, entry)?;
        let (_, bytes) = codec::compress_chain(&src.pixels, &chain)?;
        let rel = format!("{slug}/{}/{}.jpg", entry.role, entry.id);
        let checksum = write_artifact(root, &rel, &bytes)?;
        Ok::<_, Error>(ManifestEntry {
            id: entry.id.clone(),
            role: entry.role,
            source_id: entry.source_id.clone(),
            kind: EntryKind::Chain {
                chain,
                original: entry.path.clone(),
            },
            path: rel,
            checksum,
        })
    })?;
    let mut manifest = DatasetManifest::new(recipe.name.clone(), seed_value);
    manifest.entries = entries;
    manifest.save(&root.join(&slug).join("manifest.json"))?;
    Ok(manifest)
}

/// A two-half composite and its saved forms.
#[derive(Clone, Debug)]
pub struct Composite {
    /// Composite pixels before any whole-image recompression.
    pub image: GrayPlane,
    /// 0 on the left half, 1 on the right half.
    pub mask: Array2<u8>,
    pub lossless_png: Vec<u8>,
    /// Decoded pixels and JPEG bytes of the whole-image recompression.
    pub recompressed: Option<(GrayPlane, Vec<u8>)>,
}

impl Composite {
    /// Pixels of the saved variant: recompressed when a recompression QF is set.
    pub fn final_pixels(&self) -> &GrayPlane {
        self.recompressed.as_ref().map_or(&self.image, |(p, _)| p)
    }
}

pub fn composite_mask(h: usize, w: usize) -> Array2<u8> {
    Array2::from_shape_fn((h, w), |(_, x)| u8::from(x >= w / 2))
}

/// Left half at `spec.left_qf`, right half at `spec.right_qf`. Each QF is
/// applied to the whole source and the halves are cut from the decoded
/// planes, so both halves keep the source's block grid.
pub fn build_composite(src: &SourceImage, spec: &CompositeSpec) -> Result<Composite> {
    let halves = build_halves(src, spec)?;
    finish_composite(halves, spec.recompress_qf)
}

fn build_halves(src: &SourceImage, spec: &CompositeSpec) -> Result<GrayPlane> {
    spec.validate()?;
    let (h, w) = src.pixels.dim();
    if w % 2 != 0 {
        return Err(Error::Data(format!(
            "composite source {} has odd width {w}; halves must be equal",
            src.id
        )));
    }
    let left = codec::compress_chain(&src.pixels, &CompressionChain::jpeg([spec.left_qf]))?.0;
    let right = codec::compress_chain(&src.pixels, &CompressionChain::jpeg([spec.right_qf]))?.0;
    let image = concatenate(
        Axis(1),
        &[left.slice(s![.., ..w / 2]), right.slice(s![.., w / 2..])],
    )
    .expect("halves share height");
    debug_assert_eq!(image.dim(), (h, w));
    Ok(image)
}

fn finish_composite(image: GrayPlane, recompress_qf: Option<u8>) -> Result<Composite> {
    let (h, w) = image.dim();
    let lossless_png = codec::encode_png(&image)?;
    let recompressed = recompress_qf
        .map(|q| codec::compress_chain(&image, &CompressionChain::jpeg([q])))
        .transpose()?;
    Ok(Composite {
        mask: composite_mask(h, w),
        image,
        lossless_png,
        recompressed,
    })
}

pub fn composite_entry_id(source_id: &str, left_qf: u8, variant: Variant) -> String {
    format!("{source_id}_qf{left_qf}_{variant}")
}

/// Every test source x 15 QF pairs x 8 saved variants.
pub fn build_test_suite(root: &Path, sources: &DatasetManifest) -> Result<DatasetManifest> {
    let tests: Vec<&ManifestEntry> = sources
        .role(Role::Test)
        .filter(|e| matches!(e.kind, EntryKind::Source { .. }))
        .collect();
    let jobs: Vec<(&ManifestEntry, u8)> = tests
        .iter()
        .flat_map(|e| LEFT_QFS.iter().map(move |&q| (*e, q)))
        .collect();

    // masks first so every composite job can reference them
    for entry in &tests {
        let src = load_source(root, entry)?;
        let (h, w) = src.pixels.dim();
        let mask = composite_mask(h, w).mapv(|v| v * 255);
        write_artifact(root, &mask_path(&entry.source_id), &codec::encode_png(&mask)?)?;
    }

    let groups = par::try_map(&jobs, |(entry, left_qf)| {
        let src = load_source(root, entry)?;
        let base = build_halves(&src, &CompositeSpec::new(src.id.clone(), *left_qf, None))?;
        let mut out = Vec::with_capacity(8);
        for variant in Variant::all() {
            let spec = CompositeSpec::new(src.id.clone(), *left_qf, variant.recompress_qf());
            let (bytes, ext) = match variant {
                Variant::Lossless => (codec::encode_png(&base)?, "png"),
                Variant::Recompressed(q) => (codec::encode_jpeg(&base, q)?, "jpg"),
            };
            let id = composite_entry_id(&src.id, *left_qf, variant);
            let rel = format!("test/{}/{id}.{ext}", src.id);
            let checksum = write_artifact(root, &rel, &bytes)?;
            out.push(ManifestEntry {
                id,
                role: Role::Test,
                source_id: src.id.clone(),
                kind: EntryKind::Composite {
                    spec,
                    mask: mask_path(&src.id),
                },
                path: rel,
                checksum,
            });
        }
        Ok::<_, Error>(out)
    })?;

    let mut manifest = DatasetManifest::new("test-suite", sources.seed);
    manifest.entries = groups.into_iter().flatten().collect();
    manifest.save(&root.join(TEST_MANIFEST))?;
    Ok(manifest)
}

fn mask_path(source_id: &str) -> String {
    format!("test/{source_id}/mask.png")
}

/// Loads a saved 0/255 mask as a 0/1 plane.
pub fn load_mask(root: &Path, rel: &str) -> Result<Array2<u8>> {
    Ok(codec::read_gray(&root.join(rel))?.mapv(|v| u8::from(v > 127)))
}
