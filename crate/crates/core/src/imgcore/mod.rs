//! Raster primitives: RGB images, grayscale images, binary masks, and the
//! geometric and morphological operators the normalization stages are built on.
//!
//! All geometric operators compute in `f64` and round once when writing the
//! 8-bit output.

mod geometry;
mod io;
mod morphology;

pub use geometry::{
    crop, crop_mask, crop_to_mask, mask_crop_rect, resize, rotate, rotate_mask, rotate_point,
    translate, translate_mask,
};
pub use io::{load_image, load_mask, save_gray, save_image, save_mask};
pub use morphology::erode;

use thiserror::Error;

pub type Rgb = [u8; 3];

pub const BLACK: Rgb = [0, 0, 0];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("mask has no set pixel")]
    EmptyMask,
    #[error("buffer of {got} bytes does not match {width}x{height}x{channels}")]
    BadBuffer {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("image and mask extents differ: {0}x{1} vs {2}x{3}")]
    ExtentMismatch(usize, usize, usize, usize),
    #[error("image dimensions must be at least 1x1")]
    ZeroSize,
    #[error("i/o error on {path}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Pixel position; `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

fn raster_center(width: usize, height: usize) -> Point {
    Point::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

fn check_size(width: usize, height: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        Err(ImageError::ZeroSize)
    } else {
        Ok(())
    }
}

/// 8-bit RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_size(width, height)?;
        if data.len() != width * height * 3 {
            return Err(ImageError::BadBuffer {
                width,
                height,
                channels: 3,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut img = Self::new(width, height, BLACK);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    /// Geometric centre in pixel-centre coordinates.
    pub fn center(&self) -> Point {
        raster_center(self.width, self.height)
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Keeps pixels under the mask and zeroes the rest.
    pub fn masked(&self, mask: &Mask) -> Result<Image, ImageError> {
        same_extent(self, mask)?;
        let mut out = self.clone();
        for (px, &m) in out.data.chunks_exact_mut(3).zip(mask.data.iter()) {
            if m == 0 {
                px.fill(0);
            }
        }
        Ok(out)
    }

    /// Rec.601 luma, rounded to nearest.
    pub fn to_grayscale(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| luma(px[0], px[1], px[2]))
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(img: &Image) -> GrayImage {
    img.to_grayscale()
}

pub(crate) fn same_extent(img: &Image, mask: &Mask) -> Result<(), ImageError> {
    if img.width != mask.width || img.height != mask.height {
        Err(ImageError::ExtentMismatch(
            img.width,
            img.height,
            mask.width,
            mask.height,
        ))
    } else {
        Ok(())
    }
}

/// 8-bit single channel image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_size(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::BadBuffer {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// 255 where the mask is set, 0 elsewhere.
    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&m| m * 255).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Replicates the gray channel into RGB.
    pub fn to_rgb(&self) -> Image {
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Binary mask with samples in {0, 1}.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Mask({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask must be at least 1x1");
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        m.data.fill(1);
        m
    }

    /// Any nonzero sample becomes 1.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_size(width, height)?;
        if data.len() != width * height {
            return Err(ImageError::BadBuffer {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = u8::from(f(x, y));
            }
        }
        m
    }

    /// Foreground is every pixel with a nonzero gray value.
    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            width: gray.width,
            height: gray.height,
            data: gray.data.iter().map(|&v| u8::from(v != 0)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn center(&self) -> Point {
        raster_center(self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Tight inclusive bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<Rect> {
        let mut rect: Option<Rect> = None;
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&v| v != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
            rect = Some(match rect {
                None => Rect {
                    x0: first,
                    y0: y,
                    x1: last,
                    y1: y,
                },
                Some(r) => Rect {
                    x0: r.x0.min(first),
                    y0: r.y0,
                    x1: r.x1.max(last),
                    y1: y,
                },
            });
        }
        rect
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(u8, u8) -> u8) -> Mask {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask extents differ"
        );
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a | b)
    }

    /// Set difference `self \ other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a & (1 - b))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Zeroes rows `0..rows`.
    pub fn clear_rows(&mut self, rows: usize) {
        let rows = rows.min(self.height);
        self.data[..rows * self.width].fill(0);
    }
}
