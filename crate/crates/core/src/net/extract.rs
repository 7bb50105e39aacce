use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::model::FingerprintNet;
use crate::dataset::SourceImage;
use crate::error::{Error, Result};
use crate::par;

/// Per-pixel compression fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comprint {
    #[serde(skip)]
    pub values: Array2<f32>,
    pub source_id: String,
    pub model_tag: String,
}

impl Comprint {
    pub fn new(values: Array2<f32>, source_id: impl Into<String>, model_tag: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("comprint contains non-finite values".into()));
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
            model_tag: model_tag.into(),
        })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Tile starts covering `0..len`: every `step`, with the last tile flush
/// against the end.
fn tile_starts(len: usize, tile: usize, step: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts.dedup();
    starts
}

/// Runs the network over overlapping `tile x tile` crops and averages the
/// overlaps. Images smaller than a tile are reflect-padded up to it.
pub fn extract_comprint(model: &FingerprintNet, image: &SourceImage, tile: usize, overlap: usize) -> Result<Comprint> {
    if tile == 0 || overlap >= tile {
        return Err(Error::Config(format!(
            "tile ({tile}) must be positive and larger than overlap ({overlap})"
        )));
    }
    let (h, w) = image.pixels.dim();
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("image {} is empty", image.id)));
    }
    let (ph, pw) = (h.max(tile), w.max(tile));
    if ph > 2 * h - 1 || pw > 2 * w - 1 {
        return Err(Error::Config(format!(
            "tile {tile} is larger than the reflect-padded {h}x{w} image allows"
        )));
    }
    let padded = if (ph, pw) == (h, w) {
        image.pixels.clone()
    } else {
        Array2::from_shape_fn((ph, pw), |(y, x)| image.pixels[(reflect(y as isize, h), reflect(x as isize, w))])
    };

    let step = tile - overlap;
    let ys = tile_starts(ph, tile, step);
    let xs = tile_starts(pw, tile, step);
    let jobs: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let outputs = par::map(&jobs, |&(y, x)| {
        let crop = padded.slice(s![y..y + tile, x..x + tile]).to_owned();
        model.apply_plane(&crop)
    });

    let mut sum = Array2::<f32>::zeros((ph, pw));
    let mut count = Array2::<f32>::zeros((ph, pw));
    for (&(y, x), out) in jobs.iter().zip(&outputs) {
        let mut region = sum.slice_mut(s![y..y + tile, x..x + tile]);
        region += out;
        count.slice_mut(s![y..y + tile, x..x + tile]).mapv_inplace(|c| c + 1.0);
    }
    let values = (sum / count).slice(s![..h, ..w]).to_owned();
    Comprint::new(values, image.id.clone(), image_tag(model))
}

fn image_tag(model: &FingerprintNet) -> String {
    format!(
        "depth{}-width{}-k{}",
        model.config.depth, model.config.width, model.config.kernel
    )
}
