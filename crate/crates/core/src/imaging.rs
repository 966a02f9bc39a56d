//! Image loading, PNG/base64 transport encoding and frame resampling.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::PixelRect;

/// Filter used for every up/downscale of inpainting frames.
pub const RESAMPLE_FILTER: FilterType = FilterType::Triangle;
pub const RESAMPLE_FILTER_NAME: &str = "bilinear";

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::image(path, e))
}

pub fn load_luma(path: &Path) -> Result<GrayImage> {
    image::open(path)
        .map(|img| img.to_luma8())
        .map_err(|e| Error::image(path, e))
}

pub fn save_png(img: &DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn png_bytes(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::image("<memory>", e))?;
    Ok(buf.into_inner())
}

pub fn png_base64(img: &DynamicImage) -> Result<String> {
    Ok(STANDARD.encode(png_bytes(img)?))
}

pub fn decode_base64_image(data: &str) -> std::result::Result<DynamicImage, String> {
    // Some services prefix a data URL header.
    let payload = data.split_once(',').map_or(data, |(head, rest)| {
        if head.starts_with("data:") {
            rest
        } else {
            data
        }
    });
    let bytes = STANDARD
        .decode(payload.trim())
        .map_err(|e| format!("base64: {e}"))?;
    image::load_from_memory(&bytes).map_err(|e| format!("image decode: {e}"))
}

pub fn crop(img: &RgbImage, rect: &PixelRect) -> RgbImage {
    imageops::crop_imm(img, rect.x0, rect.y0, rect.width(), rect.height()).to_image()
}

/// Resize to a square of `side`; identity (no resampling) when already that size.
pub fn resize_square(img: &RgbImage, side: u32) -> RgbImage {
    if img.width() == side && img.height() == side {
        img.clone()
    } else {
        imageops::resize(img, side, side, RESAMPLE_FILTER)
    }
}

/// Masks stay binary: nearest-neighbour only.
pub fn resize_mask(mask: &GrayImage, side: u32) -> GrayImage {
    if mask.width() == side && mask.height() == side {
        mask.clone()
    } else {
        imageops::resize(mask, side, side, FilterType::Nearest)
    }
}

/// Copy of `base` with `patch` written at the rectangle's offset.
pub fn paste(base: &RgbImage, patch: &RgbImage, at: &PixelRect) -> RgbImage {
    let mut out = base.clone();
    imageops::replace(&mut out, patch, at.x0 as i64, at.y0 as i64);
    out
}
