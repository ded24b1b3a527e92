//! Image -> network input: upright orientation, region separation, resize.

use thiserror::Error;

use crate::imgcore::{resize, Image, ImageError, Mask};
use crate::orientation::{upright_orient, OrientationError, OrientationParams};
use crate::regions::{separate_regions, RegionError, RegionParams};
use crate::signnet::{AttributeVector, Sample};
use crate::tensorad::Tensor;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Orientation(#[from] OrientationError),
    #[error(transparent)]
    Regions(#[from] RegionError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Default)]
pub struct PipelineParams {
    pub orientation: OrientationParams,
    pub regions: RegionParams,
}

/// The three network views of one tongue, at a common square size.
#[derive(Debug, Clone)]
pub struct Views {
    pub whole: Image,
    pub body: Image,
    pub edge: Image,
    pub applied_rotation: f64,
}

/// Uprights the tongue, splits body and edge and resizes all three views
/// to `side` x `side`. Background is black in every view.
pub fn prepare(img: &Image, mask: &Mask, params: &PipelineParams, side: usize) -> Result<Views, PipelineError> {
    let up = upright_orient(img, mask, &params.orientation)?;
    let whole = up.image.masked(&up.mask)?;
    let regions = separate_regions(&whole, &up.mask, &params.regions)?;
    Ok(Views {
        whole: resize(&whole, side, side),
        body: resize(&regions.body, side, side),
        edge: resize(&regions.edge, side, side),
        applied_rotation: up.applied_rotation,
    })
}

/// `[3, h, w]` tensor with values mapped from `0..=255` to `[-1, 1]`.
pub fn image_tensor<T: Scalar>(img: &Image) -> Tensor<T> {
    let (w, h) = (img.width(), img.height());
    let raw = img.as_raw();
    let scale = T::of(1.0 / 127.5);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::of(raw[p * 3 + c] as f64) * scale - T::one()
    })
}

pub fn views_sample<T: Scalar>(views: &Views, labels: AttributeVector) -> Sample<T> {
    Sample {
        whole: image_tensor(&views.whole),
        body: image_tensor(&views.body),
        edge: image_tensor(&views.edge),
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_layout_is_channel_major() {
        let mut img = Image::new(2, 1, [0, 0, 0]);
        img.set(1, 0, [255, 0, 51]);
        let t = image_tensor::<f64>(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, -1.0, -1.0, -1.0, 51.0 / 127.5 - 1.0]);
    }
}
