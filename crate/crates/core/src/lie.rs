//! Shape-invariant one-parameter transformers.
//!
//! A transformer is the affine vector field `v(p) = A p + b` on normalized
//! image coordinates. Flowing along it for time `λ` is the affine map whose
//! homogeneous matrix is `exp(λ [[A, b], [0, 0]])`, so the family satisfies
//! `T(λ) ∘ T(μ) = T(λ + μ)`, `T(0) = I` and `T(λ)^{-1} = T(-λ)` exactly.
//! Images are moved by inverse bilinear sampling: output pixel `p` reads the
//! input at `T(λ)^{-1} p`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tape, Var, EXPM_GUARD};
use crate::error::{AdError, ModelError};
use crate::expm::{self, Mat};
use crate::image::Image;
use crate::sampling;
use crate::tensor::Tensor;

/// Pixel grid of an `H x W` image mapped onto `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateFrame {
    pub height: usize,
    pub width: usize,
}

impl CoordinateFrame {
    pub fn new(height: usize, width: usize) -> Result<Self, ModelError> {
        if height < 2 || width < 2 {
            return Err(ModelError::Dims(format!(
                "coordinate frame must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    /// Normalized `(x, y)` of a pixel; `x` follows columns, `y` rows.
    pub fn pixel_to_normalized(&self, row: usize, col: usize) -> Result<(f64, f64), ModelError> {
        if row >= self.height || col >= self.width {
            return Err(ModelError::OutOfRange(format!(
                "pixel ({row}, {col}) outside {}x{} frame",
                self.height, self.width
            )));
        }
        Ok((
            sampling::pixel_to_norm(col, self.width),
            sampling::pixel_to_norm(row, self.height),
        ))
    }

    /// Continuous inverse of [`Self::pixel_to_normalized`], as `(row, col)`.
    pub fn normalized_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            sampling::norm_to_pixel(y, self.height),
            sampling::norm_to_pixel(x, self.width),
        )
    }

    /// Normalized distance between neighbouring pixels, `(x, y)`.
    pub fn pitch(&self) -> (f64, f64) {
        (
            2.0 / (self.width - 1) as f64,
            2.0 / (self.height - 1) as f64,
        )
    }
}

/// Parameters `θ = (A, b)` of one transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl FlowParams {
    pub const ZERO: Self = Self {
        a: [[0.0; 2]; 2],
        b: [0.0; 2],
    };

    pub fn new(a: [[f64; 2]; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }

    pub fn translation(b: [f64; 2]) -> Self {
        Self { a: [[0.0; 2]; 2], b }
    }

    /// Packed `[A | b]` layout used on the tape: `[a00, a01, b0, a10, a11, b1]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            alloc::vec![2, 3],
            alloc::vec![self.a[0][0], self.a[0][1], self.b[0], self.a[1][0], self.a[1][1], self.b[1]],
        )
    }

    pub fn from_packed(d: &[f64]) -> Self {
        Self {
            a: [[d[0], d[1]], [d[3], d[4]]],
            b: [d[2], d[5]],
        }
    }

    /// Velocity `A p + b` at `(x, y)`.
    pub fn field_at(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.a[0][0] * x + self.a[0][1] * y + self.b[0],
            self.a[1][0] * x + self.a[1][1] * y + self.b[1],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().chain(self.b.iter()).all(|v| v.is_finite())
    }

    fn generator(&self, lambda: f64) -> Mat<3> {
        [
            [lambda * self.a[0][0], lambda * self.a[0][1], lambda * self.b[0]],
            [lambda * self.a[1][0], lambda * self.a[1][1], lambda * self.b[1]],
            [0.0, 0.0, 0.0],
        ]
    }
}

/// `p ↦ M p + t` on normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl AffineMap {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn translation(t: [f64; 2]) -> Self {
        Self {
            m: Self::IDENTITY.m,
            t,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * p[0] + self.m[0][1] * p[1] + self.t[0],
            self.m[1][0] * p[0] + self.m[1][1] * p[1] + self.t[1],
        ]
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            alloc::vec![2, 3],
            alloc::vec![self.m[0][0], self.m[0][1], self.t[0], self.m[1][0], self.m[1][1], self.t[1]],
        )
    }

    pub fn from_packed(d: &[f64]) -> Self {
        Self {
            m: [[d[0], d[1]], [d[3], d[4]]],
            t: [d[2], d[5]],
        }
    }

    fn to_mat(self) -> Mat<3> {
        [
            [self.m[0][0], self.m[0][1], self.t[0]],
            [self.m[1][0], self.m[1][1], self.t[1]],
            [0.0, 0.0, 1.0],
        ]
    }

    fn from_mat(m: &Mat<3>) -> Self {
        Self {
            m: [[m[0][0], m[0][1]], [m[1][0], m[1][1]]],
            t: [m[0][2], m[1][2]],
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let a = self.to_mat();
        let b = other.to_mat();
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                worst = worst.max(libm::fabs(a[i][j] - b[i][j]));
            }
        }
        worst
    }
}

/// Time-`lambda` flow of the field `A p + b`.
pub fn integrate_flow(params: &FlowParams, lambda: f64) -> Result<AffineMap, AdError> {
    if lambda == 0.0 {
        return Ok(AffineMap::IDENTITY);
    }
    let generator = params.generator(lambda);
    let magnitude = expm::norm1(&generator);
    if !(magnitude <= EXPM_GUARD) {
        return Err(AdError::Overflow {
            magnitude,
            limit: EXPM_GUARD,
        });
    }
    Ok(AffineMap::from_mat(&expm::expm(&generator)))
}

/// Apply `inner`, then `outer`.
pub fn compose(outer: &AffineMap, inner: &AffineMap) -> AffineMap {
    AffineMap::from_mat(&expm::matmul(&outer.to_mat(), &inner.to_mat()))
}

pub fn invert(map: &AffineMap) -> Result<AffineMap, AdError> {
    autodiff::invert_affine_mat(&map.to_mat()).map(|m| AffineMap::from_mat(&m))
}

/// Where each output pixel of a warp by `map` reads from, row-major `(x, y)`.
/// Depends only on the map and the frame, never on image content.
pub fn source_coordinates(map: &AffineMap, frame: CoordinateFrame) -> Result<Vec<[f64; 2]>, AdError> {
    let inverse = invert(map)?;
    let mut out = Vec::with_capacity(frame.height * frame.width);
    for r in 0..frame.height {
        let y = sampling::pixel_to_norm(r, frame.height);
        for c in 0..frame.width {
            let x = sampling::pixel_to_norm(c, frame.width);
            out.push(inverse.apply([x, y]));
        }
    }
    Ok(out)
}

/// Moves the content of `image` along `map` by inverse bilinear sampling.
pub fn warp(image: &Image, map: &AffineMap) -> Result<Image, ModelError> {
    let frame = CoordinateFrame::new(image.height(), image.width())?;
    let data = source_coordinates(map, frame)?
        .into_iter()
        .map(|[x, y]| sampling::sample(image.data(), frame.height, frame.width, x, y))
        .collect();
    Image::new(frame.height, frame.width, data)
}

/// Differentiable flow on a tape: `theta` is a packed `[2, 3]` node and
/// `lambda` a scalar node.
pub fn flow_on_tape(tape: &mut Tape, theta: Var, lambda: Var) -> Result<Var, AdError> {
    let generator = tape.scale_by(lambda, theta)?;
    tape.expm_affine(generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    #[test]
    fn constant_field_integrates_linearly() {
        let m = integrate_flow(&FlowParams::translation([1.0, 0.0]), 0.5).unwrap();
        assert_eq!(m.m, AffineMap::IDENTITY.m);
        assert!((m.t[0] - 0.5).abs() < 1e-15);
        assert_eq!(m.t[1], 0.0);
    }

    #[test]
    fn zero_time_is_identity() {
        let p = FlowParams::new([[0.3, -2.0], [1.1, 0.7]], [4.0, -1.0]);
        assert_eq!(integrate_flow(&p, 0.0).unwrap(), AffineMap::IDENTITY);
    }

    #[test]
    fn quarter_rotation() {
        let p = FlowParams::new([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]);
        let m = integrate_flow(&p, FRAC_PI_2).unwrap();
        let expect = AffineMap {
            m: [[0.0, -1.0], [1.0, 0.0]],
            t: [0.0, 0.0],
        };
        assert!(m.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn overflow_guard() {
        let p = FlowParams::translation([1.0, 0.0]);
        assert!(matches!(integrate_flow(&p, 2e3), Err(AdError::Overflow { .. })));
    }

    #[test]
    fn compose_examples() {
        let m = AffineMap::translation([0.2, -0.4]);
        assert_eq!(compose(&AffineMap::IDENTITY, &m), m);
        let sum = compose(&AffineMap::translation([0.1, 0.2]), &AffineMap::translation([0.3, 0.5]));
        assert!(sum.max_abs_diff(&AffineMap::translation([0.4, 0.7])) < 1e-15);
        let rot = AffineMap {
            m: [[0.0, -1.0], [1.0, 0.0]],
            t: [0.0, 0.0],
        };
        let c = compose(&rot, &AffineMap::translation([1.0, 0.0]));
        assert_eq!(c.m, rot.m);
        assert_eq!(c.t, [0.0, 1.0]);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(invert(&AffineMap::IDENTITY).unwrap(), AffineMap::IDENTITY);
        let inv = invert(&AffineMap::translation([0.3, -0.1])).unwrap();
        assert!(inv.max_abs_diff(&AffineMap::translation([-0.3, 0.1])) < 1e-15);
        let singular = AffineMap {
            m: [[1.0, 2.0], [2.0, 4.0]],
            t: [0.0, 0.0],
        };
        assert!(matches!(invert(&singular), Err(AdError::Singular { .. })));
    }

    #[test]
    fn pixel_mapping() {
        let f = CoordinateFrame::new(15, 15).unwrap();
        assert_eq!(f.pixel_to_normalized(0, 0).unwrap(), (-1.0, -1.0));
        assert_eq!(f.pixel_to_normalized(7, 7).unwrap(), (0.0, 0.0));
        assert_eq!(f.pixel_to_normalized(14, 14).unwrap(), (1.0, 1.0));
        let (x, y) = f.pixel_to_normalized(7, 8).unwrap();
        assert!((x - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(y, 0.0);
        assert!(f.pixel_to_normalized(15, 0).is_err());
        assert!(CoordinateFrame::new(1, 5).is_err());
    }

    #[test]
    fn identity_warp_is_bitwise() {
        let data: Vec<f64> = (0..225).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let img = Image::new(15, 15, data).unwrap();
        assert_eq!(warp(&img, &AffineMap::IDENTITY).unwrap(), img);
    }

    #[test]
    fn one_pixel_shift_right() {
        let data: Vec<f64> = (0..225).map(|i| (i % 13) as f64 / 13.0).collect();
        let img = Image::new(15, 15, data).unwrap();
        let out = warp(&img, &AffineMap::translation([1.0 / 7.0, 0.0])).unwrap();
        for r in 0..15 {
            assert_eq!(out.get(r, 0), 0.0);
            for c in 1..15 {
                assert_eq!(out.get(r, c), img.get(r, c - 1));
            }
        }
    }

    #[test]
    fn half_pixel_point_source() {
        let mut img = Image::zeros(15, 15);
        img.set(7, 7, 1.0);
        let out = warp(&img, &AffineMap::translation([1.0 / 14.0, 0.0])).unwrap();
        assert!((out.get(7, 7) - 0.5).abs() < 1e-12);
        assert!((out.get(7, 8) - 0.5).abs() < 1e-12);
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
