//! Upright orientation of segmented tongue images.
//!
//! The upper and lower outlines are traced column by column, steep segments
//! are filtered out, both outlines are smoothed, and the middle points of the
//! lower and upper outlines give the tongue tip and top. The image is then
//! rotated so that the top->tip axis points straight down, translated so the
//! tip sits at a fixed target, and cropped around the mask.
//!
//! A single pass underestimates large tilts: steep sides stop being filtered
//! once the tongue leans far enough, which pulls both middle points back
//! toward the centre column. [`upright_orient`] therefore repeats the
//! measurement on the corrected mask, always resampling from the original
//! input, until the residual correction is below
//! [`OrientationParams::tolerance`]. `max_passes = 1` gives the plain
//! single-pass behaviour.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{
    self, crop, crop_mask, mask_crop_rect, rotate, rotate_mask, translate,
    translate_mask, GrayImage, Image, ImageError, Mask, Point, BLACK,
};

#[derive(Debug, Error)]
pub enum OrientationError {
    #[error("no foreground pixel in the image")]
    NoForeground,
    #[error("contour has {0} points after filtering, need at least 3")]
    DegenerateContour(usize),
    #[error("invalid orientation parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Outline points ordered by strictly increasing `x`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Contour {
    points: Vec<Point>,
}

impl Contour {
    /// Fails unless `x` is strictly increasing.
    pub fn new(points: Vec<Point>) -> Result<Self, OrientationError> {
        if points.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(OrientationError::InvalidParams(
                "contour x coordinates must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point at index `len / 2`.
    pub fn middle(&self) -> Option<Point> {
        self.points.get(self.points.len() / 2).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationParams {
    /// Segments steeper than this many degrees from horizontal are filtered.
    pub alpha: f64,
    /// Smoothing window; `None` picks 5% of the width, odd, at least 3.
    pub smoothing: Option<usize>,
    /// Crop margin in pixels.
    pub margin: usize,
    /// Where the tip should land; `None` is `(width / 2, height - margin)`.
    pub target: Option<Point>,
    pub max_passes: usize,
    /// Residual correction, in degrees, at which refinement stops.
    pub tolerance: f64,
}

impl Default for OrientationParams {
    fn default() -> Self {
        Self {
            alpha: 60.0,
            smoothing: None,
            margin: 10,
            target: None,
            max_passes: 16,
            tolerance: 0.25,
        }
    }
}

impl OrientationParams {
    pub fn validate(&self) -> Result<(), OrientationError> {
        if !(self.alpha > 0.0 && self.alpha < 90.0) {
            return Err(OrientationError::InvalidParams(format!(
                "alpha must lie in (0, 90), got {}",
                self.alpha
            )));
        }
        if let Some(s) = self.smoothing {
            if s < 3 || s % 2 == 0 {
                return Err(OrientationError::InvalidParams(format!(
                    "smoothing window must be odd and >= 3, got {s}"
                )));
            }
        }
        if self.max_passes == 0 {
            return Err(OrientationError::InvalidParams(
                "max_passes must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn smoothing_for(&self, width: usize) -> usize {
        self.smoothing.unwrap_or_else(|| {
            let s = (0.05 * width as f64).round() as usize;
            let s = if s.is_multiple_of(2) { s + 1 } else { s };
            s.max(3)
        })
    }

    pub fn target_for(&self, width: usize, height: usize) -> Point {
        self.target.unwrap_or(Point::new(
            width as f64 / 2.0,
            height as f64 - self.margin as f64,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct OrientationResult {
    /// Uprighted, translated and cropped image.
    pub image: Image,
    /// The mask carried through the same transform and crop.
    pub mask: Mask,
    /// Angle of the top->tip axis in the input, degrees.
    pub theta: f64,
    /// Total rotation applied; `theta - 90` after a single pass.
    pub applied_rotation: f64,
    /// Tip and top as located in the input image.
    pub tip: Point,
    pub top: Point,
    /// Tip position after rotation and translation, before the crop.
    pub aligned_tip: Point,
    pub passes: usize,
}

fn segment_angle(a: Point, b: Point) -> f64 {
    (b.y - a.y).abs().atan2((b.x - a.x).abs()).to_degrees()
}

// Walks outward from `anchor`, dropping any point whose segment to the last
// kept point is steeper than `alpha`.
fn filter_steep(candidates: &[Point], alpha: f64) -> Vec<Point> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let anchor = candidates.len() / 2;
    let mut right = vec![candidates[anchor]];
    for &p in &candidates[anchor + 1..] {
        if segment_angle(*right.last().unwrap(), p) <= alpha {
            right.push(p);
        }
    }
    let mut left = Vec::new();
    let mut last = candidates[anchor];
    for &p in candidates[..anchor].iter().rev() {
        if segment_angle(last, p) <= alpha {
            left.push(p);
            last = p;
        }
    }
    left.reverse();
    left.extend(right);
    left
}

/// Traces the upper and lower outlines of the foreground (`gray > 0`) and
/// filters segments steeper than `alpha` degrees.
///
/// Filtering starts from the middle column and walks outward in both
/// directions, so every surviving consecutive segment is at most `alpha`.
pub fn detect_contours(
    gray: &GrayImage,
    alpha: f64,
) -> Result<(Contour, Contour), OrientationError> {
    let (w, h) = (gray.width(), gray.height());
    let raw = gray.as_raw();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for x in 0..w {
        let mut column = (0..h).filter(|&y| raw[y * w + x] > 0);
        if let Some(top) = column.next() {
            let bottom = column.next_back().unwrap_or(top);
            upper.push(Point::new(x as f64, top as f64));
            lower.push(Point::new(x as f64, bottom as f64));
        }
    }
    if upper.is_empty() {
        return Err(OrientationError::NoForeground);
    }
    let upper = filter_steep(&upper, alpha);
    let lower = filter_steep(&lower, alpha);
    let shortest = upper.len().min(lower.len());
    if shortest < 3 {
        return Err(OrientationError::DegenerateContour(shortest));
    }
    Ok((Contour { points: upper }, Contour { points: lower }))
}

/// Moving average of `y` over `window` neighbouring indices, truncated at the
/// ends. `x` and the point count are unchanged.
pub fn smooth_contour(c: &Contour, window: usize) -> Contour {
    let half = window / 2;
    let n = c.points.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for p in &c.points {
        prefix.push(prefix.last().unwrap() + p.y);
    }
    let points = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            Point::new(c.points[i].x, mean)
        })
        .collect();
    Contour { points }
}

/// Tip is the middle point of the lower outline, top the middle of the upper.
pub fn locate_tip_top(upper: &Contour, lower: &Contour) -> Result<(Point, Point), OrientationError> {
    for c in [upper, lower] {
        if c.len() < 3 {
            return Err(OrientationError::DegenerateContour(c.len()));
        }
    }
    Ok((lower.middle().unwrap(), upper.middle().unwrap()))
}

/// Direction of the top->tip axis in degrees, `atan2(dy, dx)` with rows
/// growing downward; 90 means the tip is straight below the top.
pub fn axis_angle(tip: Point, top: Point) -> f64 {
    (tip.y - top.y).atan2(tip.x - top.x).to_degrees()
}

/// One measurement of the tongue axis.
#[derive(Debug, Clone)]
pub struct AxisEstimate {
    pub upper: Contour,
    pub lower: Contour,
    pub tip: Point,
    pub top: Point,
    pub theta: f64,
}

impl AxisEstimate {
    /// Rotation that brings the axis to vertical.
    pub fn correction(&self) -> f64 {
        self.theta - 90.0
    }
}

pub fn estimate_axis(
    gray: &GrayImage,
    params: &OrientationParams,
) -> Result<AxisEstimate, OrientationError> {
    let (upper, lower) = detect_contours(gray, params.alpha)?;
    let s = params.smoothing_for(gray.width());
    let upper = smooth_contour(&upper, s);
    let lower = smooth_contour(&lower, s);
    let (tip, top) = locate_tip_top(&upper, &lower)?;
    Ok(AxisEstimate {
        theta: axis_angle(tip, top),
        upper,
        lower,
        tip,
        top,
    })
}

// Luma of the composited image; every mask pixel counts as foreground even
// when its colour is black.
fn foreground_gray(img: &Image, mask: &Mask) -> GrayImage {
    let mut gray = img.to_grayscale();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let v = if mask.get(x, y) { gray.get(x, y).max(1) } else { 0 };
            gray.set(x, y, v);
        }
    }
    gray
}

/// Rotates, translates and crops `img` so the tongue stands upright with its
/// tip at the target point.
pub fn upright_orient(
    img: &Image,
    mask: &Mask,
    params: &OrientationParams,
) -> Result<OrientationResult, OrientationError> {
    params.validate()?;
    imgcore::same_extent(img, mask)?;
    if mask.is_empty() {
        return Err(OrientationError::NoForeground);
    }
    let center = img.center();

    let first = estimate_axis(&foreground_gray(img, mask), params)?;
    let mut total = first.correction();
    let mut passes = 1;
    let mut rotated_mask = rotate_mask(mask, total, center);
    let mut last = estimate_axis(&GrayImage::from_mask(&rotated_mask), params)?;
    while passes < params.max_passes && last.correction().abs() > params.tolerance {
        total += last.correction();
        passes += 1;
        rotated_mask = rotate_mask(mask, total, center);
        last = estimate_axis(&GrayImage::from_mask(&rotated_mask), params)?;
    }

    let rotated = rotate(img, total, center, BLACK);
    let target = params.target_for(img.width(), img.height());
    let dx = (target.x - last.tip.x).round() as i64;
    let dy = (target.y - last.tip.y).round() as i64;
    let moved = translate(&rotated, dx, dy, BLACK);
    let moved_mask = translate_mask(&rotated_mask, dx, dy);
    let rect = mask_crop_rect(&moved_mask, params.margin)?;

    Ok(OrientationResult {
        image: crop(&moved, rect),
        mask: crop_mask(&moved_mask, rect),
        theta: first.theta,
        applied_rotation: total,
        tip: first.tip,
        top: first.top,
        aligned_tip: Point::new(last.tip.x + dx as f64, last.tip.y + dy as f64),
        passes,
    })
}

/// Debug overlay: foreground in gray, outlines in green, tip red, top blue.
pub fn draw_overlay(img: &Image, estimate: &AxisEstimate) -> Image {
    let mut out = img.clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    let mut plot = |p: Point, color, r: i64| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (p.x.round() as i64 + dx, p.y.round() as i64 + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    out.set(x as usize, y as usize, color);
                }
            }
        }
    };
    for p in estimate.upper.points().iter().chain(estimate.lower.points()) {
        plot(*p, [0, 255, 0], 0);
    }
    plot(estimate.tip, [255, 0, 0], 2);
    plot(estimate.top, [0, 0, 255], 2);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_gray(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> GrayImage {
        let mut g = GrayImage::new(w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                g.set(x, y, 200);
            }
        }
        g
    }

    #[test]
    fn rectangle_contours_are_its_edges() {
        let g = rect_gray(40, 30, 5, 30, 8, 20);
        let (u, l) = detect_contours(&g, 60.0).unwrap();
        assert_eq!(u.len(), 26);
        assert_eq!(l.len(), 26);
        assert!(u.points().iter().all(|p| p.y == 8.0));
        assert!(l.points().iter().all(|p| p.y == 20.0));
        assert_eq!(u.points()[0].x, 5.0);
    }

    #[test]
    fn circle_extremes_are_filtered() {
        let (cx, cy, r) = (100.0, 100.0, 50.0);
        let mut g = GrayImage::new(201, 201);
        for y in 0..201 {
            for x in 0..201 {
                if ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= r {
                    g.set(x, y, 128);
                }
            }
        }
        let (u, l) = detect_contours(&g, 60.0).unwrap();
        // local slope exceeds tan 60 beyond |x - cx| = r sin 60 ~ 43.3
        let limit = r * 60f64.to_radians().sin();
        for c in [&u, &l] {
            let xs: Vec<f64> = c.points().iter().map(|p| (p.x - cx).abs()).collect();
            let widest = xs.iter().cloned().fold(0.0, f64::max);
            assert!(widest <= limit + 1.0, "kept |x - cx| = {widest}");
            assert!(widest >= limit - 3.0, "filtered too much: {widest}");
            for w in c.points().windows(2) {
                assert!(segment_angle(w[0], w[1]) <= 60.0);
            }
        }
    }

    #[test]
    fn empty_image_has_no_foreground() {
        assert!(matches!(
            detect_contours(&GrayImage::new(10, 10), 60.0),
            Err(OrientationError::NoForeground)
        ));
        // a 2-column sliver cannot give 3 points
        let g = rect_gray(10, 10, 3, 4, 2, 8);
        assert!(matches!(
            detect_contours(&g, 60.0),
            Err(OrientationError::DegenerateContour(2))
        ));
    }

    fn contour_of(ys: &[f64]) -> Contour {
        Contour::new(
            ys.iter()
                .enumerate()
                .map(|(i, &y)| Point::new(i as f64, y))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn smoothing_windows() {
        let s = smooth_contour(&contour_of(&[0.0, 10.0, 0.0, 10.0, 0.0]), 3);
        let ys: Vec<f64> = s.points().iter().map(|p| p.y).collect();
        let expected = [5.0, 10.0 / 3.0, 20.0 / 3.0, 10.0 / 3.0, 5.0];
        for (a, b) in ys.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let flat = contour_of(&[4.0; 9]);
        assert_eq!(smooth_contour(&flat, 5), flat);

        let ramp: Vec<f64> = (0..20).map(|i| 0.5 * i as f64).collect();
        let s = smooth_contour(&contour_of(&ramp), 5);
        for (p, r) in s.points().iter().zip(&ramp).take(18).skip(2) {
            assert!((p.y - r).abs() < 1e-12);
        }
    }

    #[test]
    fn tip_is_floor_middle() {
        let five = contour_of(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let four = contour_of(&[0.0, 1.0, 2.0, 3.0]);
        let (tip, top) = locate_tip_top(&four, &five).unwrap();
        assert_eq!(tip, five.points()[2]);
        assert_eq!(top, four.points()[2]);
        let two = contour_of(&[0.0, 1.0]);
        assert!(locate_tip_top(&two, &five).is_err());
    }

    #[test]
    fn axis_angle_examples() {
        let theta = axis_angle(Point::new(128.0, 220.0), Point::new(128.0, 40.0));
        assert!((theta - 90.0).abs() < 1e-12);
        let theta = axis_angle(Point::new(228.0, 220.0), Point::new(128.0, 120.0));
        assert!((theta - 45.0).abs() < 1e-12);
        assert!((theta - 90.0 + 45.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation_and_defaults() {
        let p = OrientationParams::default();
        assert_eq!(p.smoothing_for(256), 13);
        assert_eq!(p.smoothing_for(20), 3);
        assert_eq!(p.target_for(256, 256), Point::new(128.0, 246.0));
        let bad = OrientationParams {
            alpha: 95.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OrientationParams {
            smoothing: Some(4),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
