use super::{Image, ImageError, Mask, Point, Rect, Rgb};

/// Forward rotation of `p` about `center` by `theta_deg` degrees.
///
/// Positive angles turn the picture counter-clockwise as displayed (rows grow
/// downward), so a direction at angle `a` (measured with `atan2(dy, dx)` in
/// image coordinates) ends up at `a - theta_deg`.
pub fn rotate_point(p: Point, theta_deg: f64, center: Point) -> Point {
    let (s, c) = theta_deg.to_radians().sin_cos();
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    Point::new(center.x + c * dx + s * dy, center.y - s * dx + c * dy)
}

// Output pixel -> source coordinates.
#[inline]
fn inverse_map(x: f64, y: f64, sin: f64, cos: f64, center: Point) -> (f64, f64) {
    let dx = x - center.x;
    let dy = y - center.y;
    (center.x + cos * dx - sin * dy, center.y + sin * dx + cos * dy)
}

/// Rotates about `center` with bilinear resampling; samples falling outside
/// the source take `fill`.
pub fn rotate(img: &Image, theta_deg: f64, center: Point, fill: Rgb) -> Image {
    let (w, h) = (img.width(), img.height());
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let src = img.as_raw();
    let mut out = Image::new(w, h, fill);
    let texel = |xi: isize, yi: isize, ch: usize| -> f64 {
        if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
            fill[ch] as f64
        } else {
            src[(yi as usize * w + xi as usize) * 3 + ch] as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse_map(x as f64, y as f64, sin, cos, center);
            if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            let mut px = [0u8; 3];
            for (ch, v) in px.iter_mut().enumerate() {
                let top = texel(xi, yi, ch) * (1.0 - fx) + texel(xi + 1, yi, ch) * fx;
                let bottom = texel(xi, yi + 1, ch) * (1.0 - fx) + texel(xi + 1, yi + 1, ch) * fx;
                *v = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, px);
        }
    }
    out
}

/// Rotates a mask with nearest-neighbour sampling, outside is 0.
pub fn rotate_mask(mask: &Mask, theta_deg: f64, center: Point) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let mut out = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse_map(x as f64, y as f64, sin, cos, center);
            let (xi, yi) = (sx.round(), sy.round());
            if xi >= 0.0 && yi >= 0.0 && xi < w as f64 && yi < h as f64 {
                out.set(x, y, mask.get(xi as usize, yi as usize));
            }
        }
    }
    out
}

fn shifted(x: usize, d: i64, n: usize) -> Option<usize> {
    let s = x as i64 - d;
    (s >= 0 && s < n as i64).then_some(s as usize)
}

/// Output pixel `(x, y)` takes input pixel `(x - dx, y - dy)`.
pub fn translate(img: &Image, dx: i64, dy: i64, fill: Rgb) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h, fill);
    for y in 0..h {
        let Some(sy) = shifted(y, dy, h) else { continue };
        for x in 0..w {
            if let Some(sx) = shifted(x, dx, w) {
                out.set(x, y, img.get(sx, sy));
            }
        }
    }
    out
}

pub fn translate_mask(mask: &Mask, dx: i64, dy: i64) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Mask::new(w, h);
    for y in 0..h {
        let Some(sy) = shifted(y, dy, h) else { continue };
        for x in 0..w {
            if let Some(sx) = shifted(x, dx, w) {
                out.set(x, y, mask.get(sx, sy));
            }
        }
    }
    out
}

/// Tight bounding box of the mask grown by `margin` on every side and clamped
/// to the raster.
pub fn mask_crop_rect(mask: &Mask, margin: usize) -> Result<Rect, ImageError> {
    let bb = mask.bounding_box().ok_or(ImageError::EmptyMask)?;
    Ok(Rect {
        x0: bb.x0.saturating_sub(margin),
        y0: bb.y0.saturating_sub(margin),
        x1: (bb.x1 + margin).min(mask.width() - 1),
        y1: (bb.y1 + margin).min(mask.height() - 1),
    })
}

pub fn crop(img: &Image, rect: Rect) -> Image {
    Image::from_fn(rect.width(), rect.height(), |x, y| {
        img.get(rect.x0 + x, rect.y0 + y)
    })
}

pub fn crop_mask(mask: &Mask, rect: Rect) -> Mask {
    Mask::from_fn(rect.width(), rect.height(), |x, y| {
        mask.get(rect.x0 + x, rect.y0 + y)
    })
}

pub fn crop_to_mask(img: &Image, mask: &Mask, margin: usize) -> Result<Image, ImageError> {
    super::same_extent(img, mask)?;
    Ok(crop(img, mask_crop_rect(mask, margin)?))
}

// Overlap of [a0, a1) with [b0, b1).
#[inline]
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Area-averaging resample to `width` x `height`.
pub fn resize(img: &Image, width: usize, height: usize) -> Image {
    assert!(width > 0 && height > 0, "target size must be at least 1x1");
    if width == img.width() && height == img.height() {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let mut out = Image::new(width, height, [0, 0, 0]);
    for oy in 0..height {
        let (fy0, fy1) = (oy as f64 * sy, (oy + 1) as f64 * sy);
        let ys = fy0.floor() as usize..(fy1.ceil() as usize).min(img.height());
        for ox in 0..width {
            let (fx0, fx1) = (ox as f64 * sx, (ox + 1) as f64 * sx);
            let xs = fx0.floor() as usize..(fx1.ceil() as usize).min(img.width());
            let mut acc = [0.0f64; 3];
            let mut total = 0.0;
            for y in ys.clone() {
                let wy = overlap(fy0, fy1, y as f64, (y + 1) as f64);
                for x in xs.clone() {
                    let wgt = wy * overlap(fx0, fx1, x as f64, (x + 1) as f64);
                    let px = img.get(x, y);
                    for c in 0..3 {
                        acc[c] += wgt * px[c] as f64;
                    }
                    total += wgt;
                }
            }
            let px = acc.map(|v| (v / total).round().clamp(0.0, 255.0) as u8);
            out.set(ox, oy, px);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::BLACK;

    fn noise_image(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = (x * 31 + y * 17 + x * y * 7) % 251;
            [v as u8, (255 - v) as u8, ((v * 3) % 256) as u8]
        })
    }

    fn center(img: &Image) -> Point {
        Point::new(
            (img.width() as f64 - 1.0) / 2.0,
            (img.height() as f64 - 1.0) / 2.0,
        )
    }

    #[test]
    fn zero_rotation_and_translation_are_exact() {
        let img = noise_image(37, 23);
        assert_eq!(rotate(&img, 0.0, center(&img), BLACK), img);
        assert_eq!(translate(&img, 0, 0, BLACK), img);
    }

    #[test]
    fn quarter_turn_moves_pixels_exactly() {
        // odd side so the centre is a pixel centre
        let mut img = Image::new(21, 21, BLACK);
        let (c, d) = (10usize, 4usize);
        img.set(c, c + d, [200, 100, 50]);
        let out = rotate(&img, 90.0, center(&img), BLACK);
        // output (c + d, c) samples input (c, c + d)
        assert_eq!(out.get(c + d, c), [200, 100, 50]);
        assert_eq!(out.get(c, c + d), BLACK);
        let p = rotate_point(Point::new(c as f64, (c + d) as f64), 90.0, center(&img));
        assert!((p.x - (c + d) as f64).abs() < 1e-9 && (p.y - c as f64).abs() < 1e-9);
    }

    #[test]
    fn rotation_round_trip_interior_within_three_levels() {
        // smooth content, as on the synthetic corpus
        let img = Image::from_fn(64, 64, |x, y| {
            let v = 128.0 + 60.0 * ((x as f64) * 0.15).sin() * ((y as f64) * 0.11).cos();
            [v as u8, (v * 0.7) as u8, 90]
        });
        let c = center(&img);
        let back = rotate(&rotate(&img, 30.0, c, BLACK), -30.0, c, BLACK);
        for y in 16..48 {
            for x in 16..48 {
                let (a, b) = (img.get(x, y), back.get(x, y));
                for ch in 0..3 {
                    assert!((a[ch] as i32 - b[ch] as i32).abs() <= 3, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn translate_moves_single_pixel() {
        let mut img = Image::new(32, 32, BLACK);
        img.set(10, 10, [255, 255, 255]);
        let out = translate(&img, 3, -2, BLACK);
        assert_eq!(out.get(13, 8), [255, 255, 255]);
        assert_eq!(out.as_raw().iter().filter(|&&v| v == 255).count(), 3);
    }

    #[test]
    fn full_shift_is_all_fill() {
        let img = noise_image(12, 7);
        let out = translate(&img, 12, 0, [9, 9, 9]);
        assert!(out.as_raw().iter().all(|&v| v == 9));
    }

    #[test]
    fn crop_rect_arithmetic() {
        let mut m = Mask::new(100, 100);
        m.set(10, 10, true);
        m.set(20, 30, true);
        let r = mask_crop_rect(&m, 5).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (5, 25, 5, 35));
        let r = mask_crop_rect(&m, 50).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1), (0, 70, 0, 80));

        let mut single = Mask::new(12, 12);
        single.set(5, 5, true);
        let img = noise_image(12, 12);
        let c = crop_to_mask(&img, &single, 0).unwrap();
        assert_eq!((c.width(), c.height()), (1, 1));
        assert_eq!(c.get(0, 0), img.get(5, 5));
    }

    #[test]
    fn crop_of_empty_mask_fails() {
        let img = noise_image(8, 8);
        assert!(matches!(
            crop_to_mask(&img, &Mask::new(8, 8), 0),
            Err(ImageError::EmptyMask)
        ));
    }

    #[test]
    fn resize_constant_and_block_average() {
        let img = Image::new(40, 30, [10, 20, 30]);
        let r = resize(&img, 7, 5);
        assert!(r.as_raw().chunks(3).all(|p| p == [10, 20, 30]));

        let checker = Image::from_fn(4, 4, |x, _| if x % 2 == 0 { [0; 3] } else { [200; 3] });
        let r = resize(&checker, 2, 2);
        assert!(r.as_raw().iter().all(|&v| v == 100));
    }
}
