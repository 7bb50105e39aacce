//! Grayscale JPEG/PNG coding with pinned settings: baseline sequential JPEG,
//! Annex K luminance table scaled by the libjpeg quality mapping, standard
//! Huffman tables.


use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{GrayImage, ImageEncoder, ImageFormat};
use ndarray::Array2;

use super::chain::CompressionChain;
use crate::error::{Error, Result};

pub type GrayPlane = Array2<u8>;

pub fn plane_to_image(pixels: &GrayPlane) -> GrayImage {
    let (h, w) = pixels.dim();
    let data: Vec<u8> = pixels.iter().copied().collect();
    GrayImage::from_raw(w as u32, h as u32, data).expect("buffer length matches dimensions")
}

pub fn image_to_plane(img: &GrayImage) -> GrayPlane {
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.as_raw().clone())
        .expect("buffer length matches dimensions")
}

pub fn encode_jpeg(pixels: &GrayPlane, qf: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&qf) {
        return Err(Error::Config(format!("invalid JPEG quality factor {qf}")));
    }
    let mut out = Vec::new();
    let img = plane_to_image(pixels);
    JpegEncoder::new_with_quality(&mut out, qf).encode_image(&img)?;
    Ok(out)
}

pub fn encode_png(pixels: &GrayPlane) -> Result<Vec<u8>> {
    let (h, w) = pixels.dim();
    let data: Vec<u8> = pixels.iter().copied().collect();
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(
        &data,
        w as u32,
        h as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}

/// Decodes any supported raster file to a single 8-bit plane. Color inputs
/// go through the BT.601 luma conversion.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayPlane> {
    let img = image::load_from_memory(bytes)?;
    Ok(image_to_plane(&super::preprocess::to_gray(&img)))
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<GrayPlane> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Jpeg)?;
    Ok(image_to_plane(&img.to_luma8()))
}

/// Applies every JPEG step in order, each decode feeding the next encode.
/// Returns the final decoded plane and the bytes of the final file (the last
/// JPEG, or a PNG when the chain ends losslessly).
pub fn compress_chain(pixels: &GrayPlane, chain: &CompressionChain) -> Result<(GrayPlane, Vec<u8>)> {
    chain.validate()?;
    let mut current = pixels.clone();
    let mut bytes = Vec::new();
    for &qf in &chain.steps {
        bytes = encode_jpeg(&current, qf)?;
        current = decode_jpeg(&bytes)?;
    }
    if chain.final_lossless {
        bytes = encode_png(&current)?;
    }
    Ok((current, bytes))
}

/// Writes an 8-bit plane as PNG through an in-memory buffer.
pub fn write_png(path: &std::path::Path, pixels: &GrayPlane) -> Result<Vec<u8>> {
    let bytes = encode_png(pixels)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn read_gray(path: &std::path::Path) -> Result<GrayPlane> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gray(&bytes)
}
