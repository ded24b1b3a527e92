//! Separation of an uprighted tongue into a peripheral edge band and the body.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{erode, Image, ImageError, Mask};

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("edge width ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    /// Edge band width as a fraction of the image diagonal.
    pub edge_ratio: f64,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self { edge_ratio: 0.191 }
    }
}

#[derive(Debug, Clone)]
pub struct RegionPair {
    pub body: Image,
    pub edge: Image,
    pub body_mask: Mask,
    pub edge_mask: Mask,
}

/// `floor(sqrt(h^2 + w^2) * r)`.
pub fn edge_width(h: usize, w: usize, r: f64) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    (diag * r).floor() as usize
}

/// Splits the mask into an edge band (mask minus its erosion, with the top
/// fifth of the rows removed) and the body (everything else under the mask),
/// and applies both to the image.
pub fn separate_regions(
    img: &Image,
    mask: &Mask,
    params: &RegionParams,
) -> Result<RegionPair, RegionError> {
    let r = params.edge_ratio;
    if !(r > 0.0 && r < 1.0) {
        return Err(RegionError::BadRatio(r));
    }
    if mask.is_empty() {
        return Err(ImageError::EmptyMask.into());
    }
    let (h, w) = (img.height(), img.width());
    let e_w = edge_width(h, w, r);
    let eroded = erode(mask, e_w);
    let mut edge_mask = mask.minus(&eroded);
    edge_mask.clear_rows(h / 5);
    let body_mask = mask.minus(&edge_mask);
    Ok(RegionPair {
        body: img.masked(&body_mask)?,
        edge: img.masked(&edge_mask)?,
        body_mask,
        edge_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edge_width_examples() {
        assert_eq!(edge_width(480, 640, 0.191), 152);
        assert_eq!(edge_width(256, 256, 0.191), 69);
        assert_eq!(edge_width(256, 256, 1e-9), 0);
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [(x * 9) as u8 | 1, (y * 5) as u8 | 1, 77])
    }

    #[test]
    fn thick_kernel_leaves_top_fifth_as_body() {
        let (w, h) = (30, 20);
        let mask = Mask::full(w, h);
        let pair = separate_regions(&textured(w, h), &mask, &RegionParams { edge_ratio: 0.9 }).unwrap();
        let top = Mask::from_fn(w, h, |_, y| y < h / 5);
        assert_eq!(pair.body_mask, top);
        assert_eq!(pair.edge_mask, mask.minus(&top));
    }

    #[test]
    fn small_kernel_gives_one_pixel_rim() {
        let (w, h) = (40, 40);
        let mask = Mask::from_fn(w, h, |x, y| (5..35).contains(&x) && (5..35).contains(&y));
        // diagonal ~56.6; ratio picks e_w = 2, rounded up to a 3x3 kernel
        let r = 2.5 / ((w * w + h * h) as f64).sqrt();
        assert_eq!(edge_width(h, w, r), 2);
        let pair = separate_regions(&textured(w, h), &mask, &RegionParams { edge_ratio: r }).unwrap();
        let rim = Mask::from_fn(w, h, |x, y| {
            mask.get(x, y) && y >= h / 5 && (x == 5 || x == 34 || y == 5 || y == 34)
        });
        assert_eq!(pair.edge_mask, rim);

        // e_w = 1 is a unit kernel: nothing is eroded, so no edge band
        let r = 1.5 / ((w * w + h * h) as f64).sqrt();
        let pair = separate_regions(&textured(w, h), &mask, &RegionParams { edge_ratio: r }).unwrap();
        assert!(pair.edge_mask.is_empty());
        assert_eq!(pair.body_mask, mask);
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = textured(8, 8);
        assert!(matches!(
            separate_regions(&img, &Mask::new(8, 8), &RegionParams::default()),
            Err(RegionError::Image(ImageError::EmptyMask))
        ));
        assert!(matches!(
            separate_regions(&img, &Mask::full(8, 8), &RegionParams { edge_ratio: 1.5 }),
            Err(RegionError::BadRatio(_))
        ));
    }

    fn blob(w: usize, h: usize, seed: u64) -> Mask {
        let cx = w as f64 / 2.0 + (seed % 7) as f64 - 3.0;
        let cy = h as f64 / 2.0;
        let (a, b) = (w as f64 * 0.35, h as f64 * 0.4);
        Mask::from_fn(w, h, |x, y| {
            let dx = (x as f64 - cx) / a;
            let dy = (y as f64 - cy) / b;
            dx * dx + dy * dy <= 1.0 && !(x as u64 * 31 + y as u64 * 17 + seed).is_multiple_of(23)
        })
    }

    proptest! {
        #[test]
        fn partition_and_top_fifth(w in 8usize..60, h in 8usize..60, seed in any::<u64>(), r in 0.01f64..0.6) {
            let mask = blob(w, h, seed);
            prop_assume!(!mask.is_empty());
            let img = textured(w, h);
            let pair = separate_regions(&img, &mask, &RegionParams { edge_ratio: r }).unwrap();
            prop_assert!(pair.edge_mask.and(&pair.body_mask).is_empty());
            prop_assert_eq!(pair.edge_mask.or(&pair.body_mask), mask.clone());
            prop_assert_eq!(pair.edge_mask.count() + pair.body_mask.count(), mask.count());
            for y in 0..h / 5 {
                for x in 0..w {
                    prop_assert!(!pair.edge_mask.get(x, y));
                }
            }
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(pair.body.get(x, y) == [0, 0, 0], !pair.body_mask.get(x, y));
                    prop_assert_eq!(pair.edge.get(x, y) == [0, 0, 0], !pair.edge_mask.get(x, y));
                }
            }
        }

        #[test]
        fn edge_grows_with_ratio(w in 8usize..60, h in 8usize..60, seed in any::<u64>(), r1 in 0.01f64..0.5, dr in 0.0f64..0.4) {
            let mask = blob(w, h, seed);
            prop_assume!(!mask.is_empty());
            let img = textured(w, h);
            let small = separate_regions(&img, &mask, &RegionParams { edge_ratio: r1 }).unwrap();
            let large = separate_regions(&img, &mask, &RegionParams { edge_ratio: (r1 + dr).min(0.99) }).unwrap();
            prop_assert!(small.edge_mask.count() <= large.edge_mask.count());
        }
    }
}
