//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! Every primitive records its value and operands on a [`Tape`]; the tape is
//! append-only, so creation order is a topological order. [`Tape::backward`]
//! walks the tape once in reverse and accumulates gradients in that fixed
//! order, which makes the result bit-reproducible.
//!
//! ```
//! use lgcompose_core::autodiff::Tape;
//! use lgcompose_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
//! ```

mod backward;
mod gradcheck;

use alloc::vec;
use alloc::vec::Vec;

pub use backward::Gradients;
pub use gradcheck::{grad_check, GradCheckReport, ProbeFailure};

use crate::error::AdError;
use crate::expm::{self, Mat};
use crate::sampling;
use crate::tensor::Tensor;

/// Offset added inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Guard on the 1-norm of the matrix handed to the exponential.
pub const EXPM_GUARD: f64 = 1e3;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    ScaleConst(Var, f64),
    /// scalar node times tensor node
    ScaleBy(Var, Var),
    Sum(Var),
    Square(Var),
    Abs(Var),
    Exp(Var),
    Log(Var, f64),
    Softmax(Var, usize),
    MatVec(Var, Var),
    CumSum(Var),
    Select(Var, usize),
    Element(Var, usize),
    StopGrad(Var),
    ExpmAffine(Var),
    ComposeAffine(Var, Var),
    InvertAffine(Var),
    AffineGrid(Var, usize, usize),
    BilinearGather(Var, Var),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

/// Append-only record of a computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), AdError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AdError::NonFinite { op })
    }
}

/// Reads a `2x3` tensor `[M | t]` as a `3x3` homogeneous matrix.
pub(crate) fn affine_to_mat(t: &Tensor) -> Mat<3> {
    let d = t.data();
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [0.0, 0.0, 1.0]]
}

/// Reads a `2x3` tensor as the top rows of a `3x3` matrix with a zero last row.
pub(crate) fn generator_to_mat(t: &Tensor) -> Mat<3> {
    let d = t.data();
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [0.0, 0.0, 0.0]]
}

pub(crate) fn mat_top_rows(m: &Mat<3>) -> Vec<f64> {
    vec![m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
}

pub(crate) fn invert_affine_mat(m: &Mat<3>) -> Result<Mat<3>, AdError> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(libm::fabs(det) >= 1e-12) {
        return Err(AdError::Singular { det });
    }
    let inv_det = 1.0 / det;
    let a = m[1][1] * inv_det;
    let b = -m[0][1] * inv_det;
    let c = -m[1][0] * inv_det;
    let d = m[0][0] * inv_det;
    let (tx, ty) = (m[0][2], m[1][2]);
    Ok([
        [a, b, -(a * tx + b * ty)],
        [c, d, -(c * tx + d * ty)],
        [0.0, 0.0, 1.0],
    ])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Operands `v` was computed from, in recording order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match self.nodes.get(v.0).map(|n| &n.op) {
            None | Some(Op::Leaf) | Some(Op::Const) => Vec::new(),
            Some(op) => match *op {
                Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::ScaleBy(a, b)
                | Op::MatVec(a, b)
                | Op::ComposeAffine(a, b)
                | Op::BilinearGather(a, b) => vec![a, b],
                Op::Neg(a)
                | Op::ScaleConst(a, _)
                | Op::Sum(a)
                | Op::Square(a)
                | Op::Abs(a)
                | Op::Exp(a)
                | Op::Log(a, _)
                | Op::Softmax(a, _)
                | Op::CumSum(a)
                | Op::Select(a, _)
                | Op::Element(a, _)
                | Op::StopGrad(a)
                | Op::ExpmAffine(a)
                | Op::InvertAffine(a)
                | Op::AffineGrid(a, _, _) => vec![a],
                Op::Leaf | Op::Const => Vec::new(),
            },
        }
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn check(&self, v: Var) -> Result<&Tensor, AdError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(AdError::UnknownVar { id: v.0 })
    }

    fn push(&mut self, op: &'static str, value: Tensor, record: Op) -> Result<Var, AdError> {
        check_finite(op, value.data())?;
        self.nodes.push(Node { value, op: record });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes.get(v.0).map(|n| &n.op), Some(Op::Leaf))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<Var, AdError> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        if va.shape() != vb.shape() {
            return Err(AdError::ShapeMismatch {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(op, value, record)
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        record: Op,
    ) -> Result<Var, AdError> {
        let va = self.check(a)?;
        let data = va.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(op, value, record)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.unary("scale", a, |x| c * x, Op::ScaleConst(a, c))
    }

    /// Scalar node times a tensor node.
    pub fn scale_by(&mut self, scalar: Var, a: Var) -> Result<Var, AdError> {
        let vs = self.check(scalar)?;
        if !vs.is_scalar() {
            return Err(AdError::InvalidShape {
                op: "scale_by",
                shape: vs.shape().to_vec(),
                reason: "first operand must be scalar",
            });
        }
        let s = vs.data()[0];
        let va = self.check(a)?;
        let value = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|x| s * x).collect());
        self.push("scale_by", value, Op::ScaleBy(scalar, a))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let total: f64 = self.check(a)?.data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary("abs", a, libm::fabs, Op::Abs(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary("exp", a, libm::exp, Op::Exp(a))
    }

    /// `ln(x + LOG_EPS)`.
    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary("log", a, |x| libm::log(x + LOG_EPS), Op::Log(a, LOG_EPS))
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AdError> {
        let va = self.check(a)?;
        let shape = va.shape().to_vec();
        if axis >= shape.len() {
            return Err(AdError::InvalidShape {
                op: "softmax",
                shape,
                reason: "axis out of range",
            });
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = va.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = libm::exp(src[idx(k)] - max);
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[idx(k)] /= total;
                }
            }
        }
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax(a, axis))
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var, AdError> {
        let (vm, vv) = (self.check(m)?, self.check(v)?);
        let ok = vm.shape().len() == 2 && vv.shape().len() == 1 && vm.shape()[1] == vv.shape()[0];
        if !ok {
            return Err(AdError::ShapeMismatch {
                op: "matvec",
                left: vm.shape().to_vec(),
                right: vv.shape().to_vec(),
            });
        }
        let (rows, cols) = (vm.shape()[0], vm.shape()[1]);
        let out = (0..rows)
            .map(|r| (0..cols).map(|c| vm.data()[r * cols + c] * vv.data()[c]).sum())
            .collect();
        self.push("matvec", Tensor::from_parts(vec![rows], out), Op::MatVec(m, v))
    }

    /// Inclusive prefix sum along the last axis.
    pub fn cumsum(&mut self, a: Var) -> Result<Var, AdError> {
        let va = self.check(a)?;
        let shape = va.shape().to_vec();
        let n = *shape.last().ok_or(AdError::InvalidShape {
            op: "cumsum",
            shape: shape.clone(),
            reason: "rank-0 operand",
        })?;
        let mut out = va.data().to_vec();
        if n > 0 {
            for chunk in out.chunks_mut(n) {
                for i in 1..n {
                    chunk[i] += chunk[i - 1];
                }
            }
        }
        self.push("cumsum", Tensor::from_parts(shape, out), Op::CumSum(a))
    }

    /// Slice `index` along the first axis.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var, AdError> {
        let va = self.check(a)?;
        let shape = va.shape();
        if shape.is_empty() || index >= shape[0] {
            return Err(AdError::InvalidShape {
                op: "select",
                shape: shape.to_vec(),
                reason: "index out of range on axis 0",
            });
        }
        let sub: Vec<usize> = shape[1..].to_vec();
        let stride: usize = sub.iter().product();
        let data = va.data()[index * stride..(index + 1) * stride].to_vec();
        self.push("select", Tensor::from_parts(sub, data), Op::Select(a, index))
    }

    /// One element by flat row-major index, as a scalar.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var, AdError> {
        let va = self.check(a)?;
        let Some(v) = va.data().get(index) else {
            return Err(AdError::InvalidShape {
                op: "element",
                shape: va.shape().to_vec(),
                reason: "flat index out of range",
            });
        };
        let v = *v;
        self.push("element", Tensor::scalar(v), Op::Element(a, index))
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_grad(&mut self, a: Var) -> Result<Var, AdError> {
        let value = self.check(a)?.clone();
        self.push("stop_grad", value, Op::StopGrad(a))
    }

    /// Exponential of the `3x3` generator `[[A, b], [0, 0]]` given as a
    /// `2x3` tensor `[A | b]`; returns the affine map `[M | t]`.
    pub fn expm_affine(&mut self, generator: Var) -> Result<Var, AdError> {
        let vg = self.check(generator)?;
        if vg.shape() != [2, 3] {
            return Err(AdError::ShapeMismatch {
                op: "expm_affine",
                left: vg.shape().to_vec(),
                right: vec![2, 3],
            });
        }
        let g = generator_to_mat(vg);
        let magnitude = expm::norm1(&g);
        if !(magnitude <= EXPM_GUARD) {
            return Err(AdError::Overflow {
                magnitude,
                limit: EXPM_GUARD,
            });
        }
        let e = expm::expm(&g);
        self.push(
            "expm_affine",
            Tensor::from_parts(vec![2, 3], mat_top_rows(&e)),
            Op::ExpmAffine(generator),
        )
    }

    /// Affine composition: apply `inner`, then `outer`.
    pub fn compose_affine(&mut self, outer: Var, inner: Var) -> Result<Var, AdError> {
        let (vo, vi) = (self.check(outer)?, self.check(inner)?);
        if vo.shape() != [2, 3] || vi.shape() != [2, 3] {
            return Err(AdError::ShapeMismatch {
                op: "compose_affine",
                left: vo.shape().to_vec(),
                right: vi.shape().to_vec(),
            });
        }
        let c = expm::matmul(&affine_to_mat(vo), &affine_to_mat(vi));
        self.push(
            "compose_affine",
            Tensor::from_parts(vec![2, 3], mat_top_rows(&c)),
            Op::ComposeAffine(outer, inner),
        )
    }

    pub fn invert_affine(&mut self, map: Var) -> Result<Var, AdError> {
        let vm = self.check(map)?;
        if vm.shape() != [2, 3] {
            return Err(AdError::ShapeMismatch {
                op: "invert_affine",
                left: vm.shape().to_vec(),
                right: vec![2, 3],
            });
        }
        let inv = invert_affine_mat(&affine_to_mat(vm))?;
        self.push(
            "invert_affine",
            Tensor::from_parts(vec![2, 3], mat_top_rows(&inv)),
            Op::InvertAffine(map),
        )
    }

    /// Image of every pixel centre of a `height x width` grid under `map`,
    /// as a `[height, width, 2]` tensor of normalized `(x, y)`.
    pub fn affine_grid(&mut self, map: Var, height: usize, width: usize) -> Result<Var, AdError> {
        let vm = self.check(map)?;
        if vm.shape() != [2, 3] {
            return Err(AdError::ShapeMismatch {
                op: "affine_grid",
                left: vm.shape().to_vec(),
                right: vec![2, 3],
            });
        }
        if height < 2 || width < 2 {
            return Err(AdError::InvalidShape {
                op: "affine_grid",
                shape: vec![height, width],
                reason: "grid must be at least 2x2",
            });
        }
        let m = vm.data();
        let mut out = Vec::with_capacity(height * width * 2);
        for r in 0..height {
            let y = sampling::pixel_to_norm(r, height);
            for c in 0..width {
                let x = sampling::pixel_to_norm(c, width);
                out.push(m[0] * x + m[1] * y + m[2]);
                out.push(m[3] * x + m[4] * y + m[5]);
            }
        }
        self.push(
            "affine_grid",
            Tensor::from_parts(vec![height, width, 2], out),
            Op::AffineGrid(map, height, width),
        )
    }

    /// Bilinear sample of `image` (`[H, W]`) at each normalized coordinate of
    /// `coords` (`[h, w, 2]`), zero outside the image.
    pub fn bilinear_gather(&mut self, image: Var, coords: Var) -> Result<Var, AdError> {
        let (vi, vc) = (self.check(image)?, self.check(coords)?);
        let ok = vi.shape().len() == 2
            && vi.shape()[0] >= 2
            && vi.shape()[1] >= 2
            && vc.shape().len() == 3
            && vc.shape()[2] == 2;
        if !ok {
            return Err(AdError::ShapeMismatch {
                op: "bilinear_gather",
                left: vi.shape().to_vec(),
                right: vc.shape().to_vec(),
            });
        }
        let (h, w) = (vi.shape()[0], vi.shape()[1]);
        let out: Vec<f64> = vc
            .data()
            .chunks_exact(2)
            .map(|p| sampling::sample(vi.data(), h, w, p[0], p[1]))
            .collect();
        let shape = vec![vc.shape()[0], vc.shape()[1]];
        self.push(
            "bilinear_gather",
            Tensor::from_parts(shape, out),
            Op::BilinearGather(image, coords),
        )
    }

    /// Resamples `image` so that each output pixel `p` reads the input at
    /// `map^{-1}(p)`: the content moves along `map`.
    pub fn warp(&mut self, image: Var, map: Var) -> Result<Var, AdError> {
        let shape = self.check(image)?.shape().to_vec();
        if shape.len() != 2 {
            return Err(AdError::InvalidShape {
                op: "warp",
                shape,
                reason: "image must be rank 2",
            });
        }
        let inverse = self.invert_affine(map)?;
        let grid = self.affine_grid(inverse, shape[0], shape[1])?;
        self.bilinear_gather(image, grid)
    }
}

/// `(outer, n, inner)` extents around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn add_elementwise() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[1.0, 2.0]));
        let b = t.leaf(v(&[3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_uniform() {
        let mut t = Tape::new();
        let a = t.leaf(v(&[0.0, 0.0, 0.0]));
        let s = t.softmax(a, 0).unwrap();
        for x in t.value(s).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_of_zero_is_guarded() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(0.0));
        let l = t.log(a).unwrap();
        let got = t.value(l).item().unwrap();
        assert!((got - (-27.631_021_115_928_547)).abs() < 1e-9, "{got}");
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2]));
        let b = t.leaf(Tensor::zeros(&[3]));
        let err = t.add(a, b).unwrap_err();
        assert_eq!(
            err,
            AdError::ShapeMismatch {
                op: "add",
                left: vec![2],
                right: vec![3]
            }
        );
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2]") && msg.contains("[3]"));
    }

    #[test]
    fn non_finite_result_names_primitive() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(800.0));
        assert_eq!(t.exp(a).unwrap_err(), AdError::NonFinite { op: "exp" });
    }

    #[test]
    fn cumsum_last_axis() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 3], vec![0.2, 0.2, 0.2, 1.0, -1.0, 0.5]).unwrap());
        let c = t.cumsum(a).unwrap();
        let d = t.value(c).data();
        assert!((d[2] - 0.6).abs() < 1e-15);
        assert_eq!(&d[3..], &[1.0, 0.0, 0.5]);
    }

    #[test]
    fn matvec_2x2() {
        let mut t = Tape::new();
        let m = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = t.leaf(v(&[1.0, -1.0]));
        let y = t.matvec(m, x).unwrap();
        assert_eq!(t.value(y).data(), &[-1.0, -1.0]);
    }

    #[test]
    fn expm_guard_rejects_large_generators() {
        let mut t = Tape::new();
        let g = t.leaf(Tensor::new(vec![2, 3], vec![2000.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(t.expm_affine(g), Err(AdError::Overflow { .. })));
    }

    #[test]
    fn singular_inverse_rejected() {
        let mut t = Tape::new();
        let m = t.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 0.0, 2.0, 4.0, 0.0]).unwrap());
        assert!(matches!(t.invert_affine(m), Err(AdError::Singular { .. })));
    }
}
