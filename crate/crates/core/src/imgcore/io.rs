use std::path::Path;

use super::{GrayImage, Image, ImageError, Mask};

fn codec(path: &Path, source: image::ImageError) -> ImageError {
    ImageError::Codec {
        path: path.display().to_string(),
        source,
    }
}

/// Reads any PNG/JPEG as 8-bit RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let rgb = image::open(path).map_err(|e| codec(path, e))?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::from_raw(w as usize, h as usize, rgb.into_raw())
}

/// Reads a single-channel mask; any nonzero sample is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, ImageError> {
    let path = path.as_ref();
    let luma = image::open(path).map_err(|e| codec(path, e))?.to_luma8();
    let (w, h) = luma.dimensions();
    Mask::from_raw(w as usize, h as usize, luma.into_raw())
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    image::save_buffer(
        path,
        img.as_raw(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| codec(path, e))
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    image::save_buffer(
        path,
        img.as_raw(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| codec(path, e))
}

/// Writes 0/255 single-channel PNG.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<(), ImageError> {
    save_gray(&GrayImage::from_mask(mask), path)
}
