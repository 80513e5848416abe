//! Learnable scene state and the superposition that rebuilds a sequence.
//!
//! Frame `i` is reconstructed as `Y_i = Σ_l (T_1 ∘ … ∘ T_K)(λ_{·,l,i}) P_l`
//! with `P_l = X_0 ⊙ softmax_l(logits)` and `λ_{k,l,i}` the running sum of
//! the per-step increments `Δλ_{k,l,1..i}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{AdError, ModelError};
use crate::image::Image;
use crate::lie::{self, CoordinateFrame, FlowParams};
use crate::tensor::Tensor;

/// Observed frames `X_0..X_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSequence {
    frames: Vec<Image>,
}

impl ObservedSequence {
    pub fn new(frames: Vec<Image>) -> Result<Self, ModelError> {
        if frames.len() < 2 {
            return Err(ModelError::Sequence(format!(
                "need at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        CoordinateFrame::new(h, w)?;
        for (i, f) in frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(ModelError::Sequence(format!(
                    "frame {i} is {}x{}, expected {h}x{w}",
                    f.height(),
                    f.width()
                )));
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ModelError::Sequence(format!(
                    "frame {i} has intensities outside [0, 1]"
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn first(&self) -> &Image {
        &self.frames[0]
    }

    /// Number of transitions `N` (frames minus one).
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn frame(&self) -> CoordinateFrame {
        CoordinateFrame {
            height: self.frames[0].height(),
            width: self.frames[0].width(),
        }
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    frame: CoordinateFrame,
    /// `[L, H, W]`
    logits: Tensor,
    thetas: Vec<FlowParams>,
    /// `[K, L, N]`
    delta_lambda: Tensor,
}

/// Tape handles for the parameters of a [`ModelState`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub logits: Var,
    pub thetas: Vec<Var>,
    pub delta_lambda: Var,
}

impl ModelState {
    pub fn new(
        frame: CoordinateFrame,
        logits: Tensor,
        thetas: Vec<FlowParams>,
        delta_lambda: Tensor,
    ) -> Result<Self, ModelError> {
        let k = thetas.len();
        let l = logits.shape().first().copied().unwrap_or(0);
        if k == 0 || l == 0 {
            return Err(ModelError::Config(format!("need K >= 1 and L >= 1, got K={k}, L={l}")));
        }
        if logits.shape() != [l, frame.height, frame.width] {
            return Err(ModelError::Dims(format!(
                "logits shape {:?} does not match {}x{} frame",
                logits.shape(),
                frame.height,
                frame.width
            )));
        }
        let dl = delta_lambda.shape();
        if dl.len() != 3 || dl[0] != k || dl[1] != l || dl[2] == 0 {
            return Err(ModelError::Dims(format!(
                "delta_lambda shape {dl:?} does not match K={k}, L={l}"
            )));
        }
        if !logits.is_finite() || !delta_lambda.is_finite() || thetas.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::Config("parameters must be finite".into()));
        }
        Ok(Self {
            frame,
            logits,
            thetas,
            delta_lambda,
        })
    }

    /// All-zero state: uniform pattern weights, zero fields, zero quantities.
    pub fn zeros(frame: CoordinateFrame, patterns: usize, transformers: usize, steps: usize) -> Self {
        Self {
            frame,
            logits: Tensor::zeros(&[patterns, frame.height, frame.width]),
            thetas: vec![FlowParams::ZERO; transformers],
            delta_lambda: Tensor::zeros(&[transformers, patterns, steps]),
        }
    }

    pub fn frame(&self) -> CoordinateFrame {
        self.frame
    }

    pub fn patterns(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn transformers(&self) -> usize {
        self.thetas.len()
    }

    pub fn steps(&self) -> usize {
        self.delta_lambda.shape()[2]
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn thetas(&self) -> &[FlowParams] {
        &self.thetas
    }

    pub fn delta_lambda(&self) -> &Tensor {
        &self.delta_lambda
    }

    pub fn logits_mut(&mut self) -> &mut Tensor {
        &mut self.logits
    }

    pub fn thetas_mut(&mut self) -> &mut [FlowParams] {
        &mut self.thetas
    }

    pub fn delta_lambda_mut(&mut self) -> &mut Tensor {
        &mut self.delta_lambda
    }

    /// Flat index of `Δλ_{k,l,i}` for `i` in `1..=N`.
    pub fn lambda_index(&self, k: usize, l: usize, i: usize) -> usize {
        debug_assert!(i >= 1);
        (k * self.patterns() + l) * self.steps() + (i - 1)
    }

    /// Parameters as tensors, ordered logits, `θ_1..θ_K`, Δλ.
    pub fn to_params(&self) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.thetas.len() + 2);
        out.push(self.logits.clone());
        out.extend(self.thetas.iter().map(FlowParams::to_tensor));
        out.push(self.delta_lambda.clone());
        out
    }

    /// Inverse of [`Self::to_params`].
    pub fn from_params(frame: CoordinateFrame, params: &[Tensor]) -> Result<Self, ModelError> {
        if params.len() < 3 {
            return Err(ModelError::Config("parameter list too short".into()));
        }
        let thetas = params[1..params.len() - 1]
            .iter()
            .map(|t| {
                if t.shape() == [2, 3] {
                    Ok(FlowParams::from_packed(t.data()))
                } else {
                    Err(ModelError::Dims(format!("theta shape {:?}", t.shape())))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(frame, params[0].clone(), thetas, params[params.len() - 1].clone())
    }

    /// Registers every parameter as a leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let logits = tape.leaf(self.logits.clone());
        let thetas = self.thetas.iter().map(|t| tape.leaf(t.to_tensor())).collect();
        let delta_lambda = tape.leaf(self.delta_lambda.clone());
        ParamVars {
            logits,
            thetas,
            delta_lambda,
        }
    }

    /// Largest absolute elementwise difference over all parameters.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_params()
            .iter()
            .zip(other.to_params().iter())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| libm::fabs(x - y)))
            .fold(0.0, f64::max)
    }

    /// `Y_0..Y_N` as plain images.
    pub fn reconstruct(&self, x0: &Image) -> Result<Vec<Image>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let graph = SceneGraph::build(&mut tape, &vars, x0)?;
        graph
            .frames
            .iter()
            .map(|y| Image::from_tensor(tape.value(*y)))
            .collect()
    }

    /// `P_1..P_L` as plain images.
    pub fn primitives(&self, x0: &Image) -> Result<Vec<Image>, ModelError> {
        let weights = pattern_weights(&self.logits)?;
        pattern_primitives(x0, &weights)
    }
}

/// Reconstruction recorded on a tape.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    /// softmax weights, `[L, H, W]`
    pub weights: Var,
    /// `P_l = X_0 ⊙ W_l`, `[L, H, W]`
    pub primitives: Var,
    /// `λ_{k,l,i}` for `i = 1..N`, `[K, L, N]`
    pub lambda: Var,
    /// `Y_0..Y_N`, each `[H, W]`
    pub frames: Vec<Var>,
}

fn check_dims(x0: &Image, frame: CoordinateFrame) -> Result<(), ModelError> {
    if x0.height() != frame.height || x0.width() != frame.width {
        return Err(ModelError::Dims(format!(
            "image is {}x{}, model expects {}x{}",
            x0.height(),
            x0.width(),
            frame.height,
            frame.width
        )));
    }
    Ok(())
}

impl SceneGraph {
    /// Records the full reconstruction from parameter leaves `vars`.
    pub fn build(tape: &mut Tape, vars: &ParamVars, x0: &Image) -> Result<Self, ModelError> {
        let shape = tape.value(vars.logits).shape().to_vec();
        let frame = CoordinateFrame::new(shape[1], shape[2])?;
        check_dims(x0, frame)?;
        let patterns = shape[0];
        let transformers = vars.thetas.len();
        let steps = tape.value(vars.delta_lambda).shape()[2];

        let weights = tape.softmax(vars.logits, 0)?;
        let tiled: Vec<f64> = x0.data().iter().copied().cycle().take(patterns * x0.data().len()).collect();
        let x0_tiled = tape.constant(Tensor::from_parts(shape.clone(), tiled));
        let primitives = tape.mul(weights, x0_tiled)?;
        let lambda = tape.cumsum(vars.delta_lambda)?;

        let per_pattern: Vec<Var> = (0..patterns)
            .map(|l| tape.select(primitives, l))
            .collect::<Result<_, _>>()?;

        let mut frames = Vec::with_capacity(steps + 1);
        frames.push(sum_vars(tape, &per_pattern)?);
        for i in 1..=steps {
            let mut moved = Vec::with_capacity(patterns);
            for (l, p) in per_pattern.iter().enumerate() {
                // T_1 outermost: fold from T_K inward
                let mut composite: Option<Var> = None;
                for k in (0..transformers).rev() {
                    let lam = tape.element(lambda, (k * patterns + l) * steps + (i - 1))?;
                    let map = lie::flow_on_tape(tape, vars.thetas[k], lam)?;
                    composite = Some(match composite {
                        None => map,
                        Some(inner) => tape.compose_affine(map, inner)?,
                    });
                }
                let composite = composite.expect("at least one transformer");
                moved.push(tape.warp(*p, composite)?);
            }
            frames.push(sum_vars(tape, &moved)?);
        }

        Ok(Self {
            weights,
            primitives,
            lambda,
            frames,
        })
    }
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var, AdError> {
    let mut acc = vars[0];
    for v in &vars[1..] {
        acc = tape.add(acc, *v)?;
    }
    Ok(acc)
}

/// Per-pixel softmax over the pattern axis.
pub fn pattern_weights(logits: &Tensor) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let w = tape.softmax(x, 0)?;
    Ok(tape.value(w).clone())
}

/// `P_l = X_0 ⊙ W_l`.
pub fn pattern_primitives(x0: &Image, weights: &Tensor) -> Result<Vec<Image>, ModelError> {
    let shape = weights.shape();
    if shape.len() != 3 || shape[1] != x0.height() || shape[2] != x0.width() {
        return Err(ModelError::Dims(format!(
            "weights {shape:?} do not match {}x{} image",
            x0.height(),
            x0.width()
        )));
    }
    let plane = x0.data().len();
    weights
        .data()
        .chunks_exact(plane)
        .map(|w| {
            let data = w.iter().zip(x0.data()).map(|(a, b)| a * b).collect();
            Image::new(x0.height(), x0.width(), data)
        })
        .collect()
}

/// `λ_{k,l,i}` for `i = 0..N` from increments `[K, L, N]`; output `[K, L, N+1]`.
pub fn cumulative_lambda(deltas: &Tensor) -> Result<Tensor, ModelError> {
    let shape = deltas.shape();
    if shape.len() != 3 {
        return Err(ModelError::Dims(format!("expected [K, L, N], got {shape:?}")));
    }
    let n = shape[2];
    let mut out = Vec::with_capacity(shape[0] * shape[1] * (n + 1));
    for row in deltas.data().chunks_exact(n.max(1)).take(shape[0] * shape[1]) {
        let mut acc = 0.0;
        out.push(0.0);
        for d in row.iter().take(n) {
            acc += d;
            out.push(acc);
        }
    }
    Tensor::new(vec![shape[0], shape[1], n + 1], out).map_err(ModelError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> CoordinateFrame {
        CoordinateFrame::new(n, n).unwrap()
    }

    #[test]
    fn uniform_weights() {
        let w = pattern_weights(&Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(w.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn extreme_logits() {
        let w = pattern_weights(&Tensor::new(vec![2, 1, 1], vec![10.0, -10.0]).unwrap()).unwrap();
        let expect = 1.0 / (1.0 + libm::exp(20.0));
        assert!((w.data()[1] - expect).abs() < 1e-20);
        assert!((w.data()[1] - 2.061e-9).abs() < 1e-12);
        assert!((w.data()[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_pattern_weights_are_one() {
        let logits = Tensor::new(vec![1, 2, 2], vec![0.3, -5.0, 7.0, 0.0]).unwrap();
        assert!(pattern_weights(&logits).unwrap().data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn primitives_partition() {
        let x0 = Image::new(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let half = pattern_primitives(&x0, &Tensor::filled(&[2, 2, 2], 0.5)).unwrap();
        assert_eq!(half[0].data(), &[0.0, 0.25, 0.5, 0.125]);
        let mut onehot = Tensor::zeros(&[2, 2, 2]);
        onehot.data_mut()[..4].fill(1.0);
        let p = pattern_primitives(&x0, &onehot).unwrap();
        assert_eq!(p[0], x0);
        assert!(p[1].data().iter().all(|v| *v == 0.0));
        let zero = pattern_primitives(&Image::zeros(2, 2), &Tensor::filled(&[2, 2, 2], 0.5)).unwrap();
        assert!(zero.iter().all(|p| p.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn cumulative_examples() {
        let c = cumulative_lambda(&Tensor::new(vec![1, 1, 3], vec![0.2, 0.2, 0.2]).unwrap()).unwrap();
        let expect = [0.0, 0.2, 0.4, 0.6];
        for (a, b) in c.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = cumulative_lambda(&Tensor::zeros(&[2, 2, 3])).unwrap();
        assert!(c.data().iter().all(|v| *v == 0.0));
        let c = cumulative_lambda(&Tensor::new(vec![1, 1, 2], vec![1.0, -1.0]).unwrap()).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn inert_state_reconstructs_first_frame() {
        let mut x0 = Image::zeros(7, 7);
        x0.set(3, 3, 1.0);
        x0.set(2, 4, 0.5);
        let state = ModelState::zeros(frame(7), 2, 2, 3);
        for y in state.reconstruct(&x0).unwrap() {
            for (a, b) in y.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dims_are_validated() {
        assert!(ModelState::new(frame(3), Tensor::zeros(&[2, 3, 4]), vec![FlowParams::ZERO], Tensor::zeros(&[1, 2, 1])).is_err());
        assert!(ModelState::new(frame(3), Tensor::zeros(&[2, 3, 3]), vec![], Tensor::zeros(&[0, 2, 1])).is_err());
        assert!(ModelState::new(frame(3), Tensor::zeros(&[2, 3, 3]), vec![FlowParams::ZERO], Tensor::zeros(&[1, 3, 1])).is_err());
        let state = ModelState::zeros(frame(3), 1, 1, 1);
        assert!(state.reconstruct(&Image::zeros(4, 4)).is_err());
    }

    #[test]
    fn sequence_validation() {
        assert!(ObservedSequence::new(vec![Image::zeros(3, 3)]).is_err());
        assert!(ObservedSequence::new(vec![Image::zeros(3, 3), Image::zeros(3, 4)]).is_err());
        let bad = Image::new(2, 2, vec![0.0, 1.5, 0.0, 0.0]).unwrap();
        assert!(ObservedSequence::new(vec![bad.clone(), bad]).is_err());
    }
}
