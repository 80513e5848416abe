//! Bilinear sampling kernels on the normalized `[-1, 1]^2` image frame.
//!
//! `x` runs along columns, `y` along rows (downward). Pixel `(row, col)` sits
//! at `x = 2 col / (W - 1) - 1`, `y = 2 row / (H - 1) - 1`. Neighbours outside
//! the image read as zero.

/// Sample positions within this distance (in pixels) of an integer grid line
/// snap onto it, so integer-pitch translations resample exactly.
pub const SNAP_TOLERANCE: f64 = 1e-9;

#[inline]
pub fn pixel_to_norm(index: usize, extent: usize) -> f64 {
    2.0 * index as f64 / (extent - 1) as f64 - 1.0
}

#[inline]
pub fn norm_to_pixel(coord: f64, extent: usize) -> f64 {
    (coord + 1.0) * 0.5 * (extent - 1) as f64
}

#[inline]
fn snap(u: f64) -> f64 {
    let r = libm::round(u);
    if libm::fabs(u - r) < SNAP_TOLERANCE {
        r
    } else {
        u
    }
}

/// Integer base corner and fractional offsets of a sample position.
#[derive(Debug, Clone, Copy)]
struct Taps {
    row: i64,
    col: i64,
    frac_row: f64,
    frac_col: f64,
}

impl Taps {
    /// `None` when all four neighbours are outside the image.
    fn locate(x: f64, y: f64, height: usize, width: usize) -> Option<Self> {
        let u = snap(norm_to_pixel(x, width));
        let v = snap(norm_to_pixel(y, height));
        if !(u > -1.0 && v > -1.0 && u < width as f64 && v < height as f64) {
            return None;
        }
        let c0 = libm::floor(u);
        let r0 = libm::floor(v);
        Some(Self {
            row: r0 as i64,
            col: c0 as i64,
            frac_row: v - r0,
            frac_col: u - c0,
        })
    }
}

#[inline]
fn pixel(image: &[f64], height: usize, width: usize, row: i64, col: i64) -> f64 {
    if row < 0 || col < 0 || row >= height as i64 || col >= width as i64 {
        0.0
    } else {
        image[row as usize * width + col as usize]
    }
}

/// Bilinear sample with zero padding.
pub fn sample(image: &[f64], height: usize, width: usize, x: f64, y: f64) -> f64 {
    let Some(t) = Taps::locate(x, y, height, width) else {
        return 0.0;
    };
    let (fr, fc) = (t.frac_row, t.frac_col);
    let mut value = 0.0;
    // Zero-weight taps are skipped so that on-grid samples copy the source
    // value bitwise.
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let w = wr * wc;
            if w != 0.0 {
                value += w * pixel(image, height, width, t.row + dr, t.col + dc);
            }
        }
    }
    value
}

/// Partial derivatives of [`sample`] with respect to `x` and `y`.
pub fn sample_coord_grad(image: &[f64], height: usize, width: usize, x: f64, y: f64) -> (f64, f64) {
    let Some(t) = Taps::locate(x, y, height, width) else {
        return (0.0, 0.0);
    };
    let (fr, fc) = (t.frac_row, t.frac_col);
    let p00 = pixel(image, height, width, t.row, t.col);
    let p01 = pixel(image, height, width, t.row, t.col + 1);
    let p10 = pixel(image, height, width, t.row + 1, t.col);
    let p11 = pixel(image, height, width, t.row + 1, t.col + 1);
    let du = (1.0 - fr) * (p01 - p00) + fr * (p11 - p10);
    let dv = (1.0 - fc) * (p10 - p00) + fc * (p11 - p01);
    (
        du * 0.5 * (width - 1) as f64,
        dv * 0.5 * (height - 1) as f64,
    )
}

/// Adds `upstream * d sample / d image` into `grad`.
pub fn scatter_image_grad(
    grad: &mut [f64],
    height: usize,
    width: usize,
    x: f64,
    y: f64,
    upstream: f64,
) {
    let Some(t) = Taps::locate(x, y, height, width) else {
        return;
    };
    let (fr, fc) = (t.frac_row, t.frac_col);
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let (r, c) = (t.row + dr, t.col + dc);
            if r >= 0 && c >= 0 && r < height as i64 && c < width as i64 {
                grad[r as usize * width + c as usize] += upstream * wr * wc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_convention() {
        assert_eq!(pixel_to_norm(0, 15), -1.0);
        assert_eq!(pixel_to_norm(14, 15), 1.0);
        assert_eq!(pixel_to_norm(7, 15), 0.0);
    }

    #[test]
    fn on_grid_samples_copy() {
        let img: alloc::vec::Vec<f64> = (0..9).map(|v| v as f64 * 0.1).collect();
        for r in 0..3 {
            for c in 0..3 {
                let v = sample(&img, 3, 3, pixel_to_norm(c, 3), pixel_to_norm(r, 3));
                assert_eq!(v, img[r * 3 + c]);
            }
        }
    }

    #[test]
    fn far_outside_is_zero() {
        let img = [1.0; 4];
        assert_eq!(sample(&img, 2, 2, 5.0, 0.0), 0.0);
        assert_eq!(sample(&img, 2, 2, 0.0, -1e6), 0.0);
    }

    #[test]
    fn half_outside_reads_half() {
        let img = [1.0; 4];
        // half a pixel left of column 0
        let x = -1.0 - 0.5 * 2.0;
        assert!((sample(&img, 2, 2, x, -1.0) - 0.5).abs() < 1e-15);
    }
}
