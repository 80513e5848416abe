use alloc::vec;
use alloc::vec::Vec;

use super::{affine_to_mat, axis_split, generator_to_mat, invert_affine_mat, mat_top_rows, Op, Tape, Var};
use crate::error::AdError;
use crate::expm::{self, Mat};
use crate::sampling;
use crate::tensor::Tensor;

/// Gradients of a scalar root with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.id()) {
            Some(Some(g)) => g.clone(),
            Some(None) => Tensor::zeros(&self.shapes[v.id()]),
            None => Tensor::zeros(&[]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id()).and_then(Option::as_ref)
    }
}

fn pad_top_rows(g: &Tensor) -> Mat<3> {
    generator_to_mat(g)
}

impl Tape {
    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        let nodes = self.nodes();
        let root_value = &nodes
            .get(root.id())
            .ok_or(AdError::UnknownVar { id: root.id() })?
            .value;
        if !root_value.is_scalar() {
            return Err(AdError::NotScalar {
                shape: root_value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id()] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.id()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            let mut acc = |v: Var, contribution: Tensor| match &mut grads[v.id()] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            };
            let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
                Tensor::from_parts(
                    t.shape().to_vec(),
                    t.data().iter().enumerate().map(|(i, x)| f(i, *x)).collect(),
                )
            };
            match &node.op {
                Op::Leaf | Op::Const | Op::StopGrad(_) => {}
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, map(&g, &|_, x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, map(&g, &|i, x| x * vb.data()[i]));
                    acc(*b, map(&g, &|i, x| x * va.data()[i]));
                }
                Op::Neg(a) => acc(*a, map(&g, &|_, x| -x)),
                Op::ScaleConst(a, c) => acc(*a, map(&g, &|_, x| c * x)),
                Op::ScaleBy(s, a) => {
                    let va = self.value(*a);
                    let sv = self.value(*s).data()[0];
                    let ds: f64 = g.data().iter().zip(va.data()).map(|(x, y)| x * y).sum();
                    acc(*s, Tensor::filled(self.value(*s).shape(), ds));
                    acc(*a, map(&g, &|_, x| sv * x));
                }
                Op::Sum(a) => {
                    let gs = g.data()[0];
                    acc(*a, Tensor::filled(self.value(*a).shape(), gs));
                }
                Op::Square(a) => {
                    let va = self.value(*a);
                    acc(*a, map(&g, &|i, x| 2.0 * va.data()[i] * x));
                }
                Op::Abs(a) => {
                    let va = self.value(*a);
                    acc(
                        *a,
                        map(&g, &|i, x| {
                            let v = va.data()[i];
                            if v > 0.0 {
                                x
                            } else if v < 0.0 {
                                -x
                            } else {
                                0.0
                            }
                        }),
                    );
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    acc(*a, map(&g, &|i, x| x * out.data()[i]));
                }
                Op::Log(a, eps) => {
                    let va = self.value(*a);
                    acc(*a, map(&g, &|i, x| x / (va.data()[i] + eps)));
                }
                Op::Softmax(a, axis) => {
                    let y = &node.value;
                    let (outer, n, inner) = axis_split(y.shape(), *axis);
                    let mut out = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                            for k in 0..n {
                                out[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                            }
                        }
                    }
                    acc(*a, Tensor::from_parts(y.shape().to_vec(), out));
                }
                Op::MatVec(m, v) => {
                    let (vm, vv) = (self.value(*m), self.value(*v));
                    let (rows, cols) = (vm.shape()[0], vm.shape()[1]);
                    let mut gm = vec![0.0; rows * cols];
                    let mut gv = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            gm[r * cols + c] = g.data()[r] * vv.data()[c];
                            gv[c] += vm.data()[r * cols + c] * g.data()[r];
                        }
                    }
                    acc(*m, Tensor::from_parts(vec![rows, cols], gm));
                    acc(*v, Tensor::from_parts(vec![cols], gv));
                }
                Op::CumSum(a) => {
                    let shape = g.shape().to_vec();
                    let n = *shape.last().unwrap_or(&0);
                    let mut out = g.data().to_vec();
                    if n > 0 {
                        for chunk in out.chunks_mut(n) {
                            for i in (0..n.saturating_sub(1)).rev() {
                                chunk[i] += chunk[i + 1];
                            }
                        }
                    }
                    acc(*a, Tensor::from_parts(shape, out));
                }
                Op::Select(a, index) => {
                    let full = self.value(*a).shape().to_vec();
                    let stride = g.len();
                    let mut out = Tensor::zeros(&full);
                    out.data_mut()[index * stride..(index + 1) * stride].copy_from_slice(g.data());
                    acc(*a, out);
                }
                Op::Element(a, index) => {
                    let mut out = Tensor::zeros(self.value(*a).shape());
                    out.data_mut()[*index] = g.data()[0];
                    acc(*a, out);
                }
                Op::ExpmAffine(gen) => {
                    let x = generator_to_mat(self.value(*gen));
                    let adj = expm::expm_adjoint3(&x, &pad_top_rows(&g));
                    acc(*gen, Tensor::from_parts(vec![2, 3], mat_top_rows(&adj)));
                }
                Op::ComposeAffine(outer, inner) => {
                    let a = affine_to_mat(self.value(*outer));
                    let b = affine_to_mat(self.value(*inner));
                    let gc = pad_top_rows(&g);
                    let ga = expm::matmul(&gc, &expm::transpose(&b));
                    let gb = expm::matmul(&expm::transpose(&a), &gc);
                    acc(*outer, Tensor::from_parts(vec![2, 3], mat_top_rows(&ga)));
                    acc(*inner, Tensor::from_parts(vec![2, 3], mat_top_rows(&gb)));
                }
                Op::InvertAffine(m) => {
                    let inv = invert_affine_mat(&affine_to_mat(self.value(*m)))?;
                    let inv_t = expm::transpose(&inv);
                    let gm = expm::matmul(&expm::matmul(&inv_t, &pad_top_rows(&g)), &inv_t);
                    let neg: Vec<f64> = mat_top_rows(&gm).into_iter().map(|x| -x).collect();
                    acc(*m, Tensor::from_parts(vec![2, 3], neg));
                }
                Op::AffineGrid(m, h, w) => {
                    let mut gm = [0.0; 6];
                    for r in 0..*h {
                        let y = sampling::pixel_to_norm(r, *h);
                        for c in 0..*w {
                            let x = sampling::pixel_to_norm(c, *w);
                            let base = (r * w + c) * 2;
                            let (gx, gy) = (g.data()[base], g.data()[base + 1]);
                            gm[0] += gx * x;
                            gm[1] += gx * y;
                            gm[2] += gx;
                            gm[3] += gy * x;
                            gm[4] += gy * y;
                            gm[5] += gy;
                        }
                    }
                    acc(*m, Tensor::from_parts(vec![2, 3], gm.to_vec()));
                }
                Op::BilinearGather(image, coords) => {
                    let (vi, vc) = (self.value(*image), self.value(*coords));
                    let (h, w) = (vi.shape()[0], vi.shape()[1]);
                    let mut gi = vec![0.0; vi.len()];
                    let mut gc = vec![0.0; vc.len()];
                    for (k, p) in vc.data().chunks_exact(2).enumerate() {
                        let up = g.data()[k];
                        if up == 0.0 {
                            continue;
                        }
                        sampling::scatter_image_grad(&mut gi, h, w, p[0], p[1], up);
                        let (dx, dy) = sampling::sample_coord_grad(vi.data(), h, w, p[0], p[1]);
                        gc[2 * k] = up * dx;
                        gc[2 * k + 1] = up * dy;
                    }
                    acc(*image, Tensor::from_parts(vi.shape().to_vec(), gi));
                    acc(*coords, Tensor::from_parts(vc.shape().to_vec(), gc));
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}
