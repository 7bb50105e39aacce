use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::codec::{image_to_plane, plane_to_image, GrayPlane};
use crate::error::{Error, Result};

/// A preprocessed single-channel corpus image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceImage {
    pub id: String,
    #[serde(skip)]
    pub pixels: GrayPlane,
    /// File path plus the preprocessing that was applied.
    pub origin: String,
}

impl SourceImage {
    pub fn new(id: impl Into<String>, pixels: GrayPlane, origin: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            pixels,
            origin: origin.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

/// BT.601 luma, rounded to 8 bits. Single-channel inputs pass through.
pub fn to_gray(img: &DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(g) => g.clone(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8()
        }
        _ => {
            let rgb = img.to_rgb8();
            let mut out = GrayImage::new(rgb.width(), rgb.height());
            for (src, dst) in rgb.pixels().zip(out.pixels_mut()) {
                let [r, g, b] = src.0;
                let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                *dst = Luma([y.round().clamp(0.0, 255.0) as u8]);
            }
            out
        }
    }
}

/// Grayscale conversion followed by a bicubic resize to `(height, width)`.
pub fn preprocess(
    id: &str,
    image: &DynamicImage,
    target: (usize, usize),
    origin: &str,
) -> Result<SourceImage> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::Config(format!("target size {th}x{tw} has a zero dimension")));
    }
    let gray = to_gray(image);
    let resized = if gray.height() as usize == th && gray.width() as usize == tw {
        gray
    } else {
        imageops::resize(&gray, tw as u32, th as u32, FilterType::CatmullRom)
    };
    Ok(SourceImage::new(
        id,
        image_to_plane(&resized),
        format!("{origin}; gray bt601; bicubic {th}x{tw}"),
    ))
}

/// Resizes an already-gray plane; used for desk-scale test sizes.
pub fn resize_plane(pixels: &GrayPlane, target: (usize, usize)) -> GrayPlane {
    let img = plane_to_image(pixels);
    image_to_plane(&imageops::resize(
        &img,
        target.1 as u32,
        target.0 as u32,
        FilterType::CatmullRom,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn rgb_to_gray_and_resize() {
        let rgb = RgbImage::from_fn(400, 300, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 77]));
        let src = preprocess("a", &DynamicImage::ImageRgb8(rgb), (200, 200), "a.png").unwrap();
        assert_eq!(src.pixels.dim(), (200, 200));
        let src = preprocess(
            "a",
            &DynamicImage::ImageRgb8(RgbImage::new(40, 30)),
            (100, 100),
            "a.png",
        )
        .unwrap();
        assert_eq!(src.pixels.dim(), (100, 100));
    }

    #[test]
    fn bt601_weights() {
        let rgb = RgbImage::from_pixel(2, 2, Rgb([200, 100, 50]));
        let g = to_gray(&DynamicImage::ImageRgb8(rgb));
        // 0.299*200 + 0.587*100 + 0.114*50 = 124.2
        assert_eq!(g.get_pixel(0, 0).0[0], 124);
    }

    #[test]
    fn gray_at_target_size_is_identity() {
        let g = GrayImage::from_fn(200, 200, |x, y| Luma([((x * 3 + y * 5) % 251) as u8]));
        let src = preprocess("g", &DynamicImage::ImageLuma8(g.clone()), (200, 200), "g").unwrap();
        assert_eq!(src.pixels, image_to_plane(&g));
    }

    #[test]
    fn zero_target_is_rejected() {
        let g = DynamicImage::ImageLuma8(GrayImage::new(4, 4));
        assert!(preprocess("g", &g, (0, 4), "g").is_err());
    }
}
