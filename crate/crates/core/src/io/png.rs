use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

fn missing_or(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::MissingFile(path.to_path_buf())
        }
        other => Error::format(format!("image {}", path.display()), other),
    }
}

/// Decodes any PNG to 8-bit RGB: `(width, height, row-major RGB bytes)`.
pub fn read_rgb(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| missing_or(path, e))?.to_rgb8();
    Ok((img.width(), img.height(), img.into_raw()))
}

pub fn read_gray(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path).map_err(|e| missing_or(path, e))?.to_luma8();
    Ok((img.width(), img.height(), img.into_raw()))
}

pub fn encode_rgb(width: u32, height: u32, rgb: Vec<u8>) -> Result<Vec<u8>> {
    let img = RgbImage::from_raw(width, height, rgb)
        .ok_or_else(|| Error::ShapeMismatch(format!("RGB buffer does not match {width}x{height}")))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).map_err(|e| Error::format("png", e))?;
    Ok(out.into_inner())
}

pub fn write_rgb(path: &Path, width: u32, height: u32, rgb: Vec<u8>) -> Result<()> {
    std::fs::write(path, encode_rgb(width, height, rgb)?)?;
    Ok(())
}

pub fn write_gray(path: &Path, width: u32, height: u32, gray: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width, height, gray)
        .ok_or_else(|| Error::ShapeMismatch(format!("gray buffer does not match {width}x{height}")))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::format("png", e))?;
    Ok(())
}
