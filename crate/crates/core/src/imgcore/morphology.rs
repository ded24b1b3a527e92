use super::Mask;

// Keeps run positions whose whole centred window of half-width `r` is set,
// treating everything outside the line as unset.
fn erode_line(line: &[u8], r: usize, out: &mut [u8]) {
    let n = line.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &v) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v as usize;
    }
    for i in 0..n {
        out[i] = if i < r || i + r >= n {
            0
        } else {
            u8::from(prefix[i + r + 1] - prefix[i - r] == 2 * r + 1)
        };
    }
}

/// Binary erosion with a `k`x`k` square of ones. Even `k` is bumped to the
/// next odd size so the kernel has a centre; `k <= 1` is the identity.
pub fn erode(mask: &Mask, k: usize) -> Mask {
    let k = if k.is_multiple_of(2) { k + 1 } else { k };
    if k <= 1 {
        return mask.clone();
    }
    let r = k / 2;
    let (w, h) = (mask.width(), mask.height());
    let src = mask.as_raw();

    // the square is separable: rows then columns
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        erode_line(&src[y * w..(y + 1) * w], r, &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0u8; w * h];
    let mut col = vec![0u8; h];
    let mut col_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        erode_line(&col, r, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    Mask::from_raw(w, h, out).expect("extent preserved")
}
