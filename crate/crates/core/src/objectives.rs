//! Loss terms and the two training objectives.
//!
//! The pattern objective is `Σ_i r^i ‖X_i − Y_i‖² + α H(Q)`; the transformer
//! objective is `Σ_i r^i ‖X_i − Y_i ⊙ X_i‖² + β L1 + γ Λ + δ I`, where `Λ`
//! pins the largest final transformation quantity of each transformer to 1
//! and `I` penalizes overlap between transformer parameters.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{AdError, ModelError};
use crate::image::Image;
use crate::scene::{ModelState, ObservedSequence, ParamVars, SceneGraph};
use crate::tensor::Tensor;

/// Transformers whose largest final `|λ|` is below this are skipped by the
/// scale loss.
pub const INERT_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// discount on later frames
    pub r: f64,
    /// pattern entropy
    pub alpha: f64,
    /// L1 on transformer parameters
    pub beta: f64,
    /// λ scale
    pub gamma: f64,
    /// pairwise inner products
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            r: 0.9,
            alpha: 0.001,
            beta: 0.0001,
            gamma: 0.1,
            delta: 0.0001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(ModelError::Config(format!("discount r must be in (0, 1], got {}", self.r)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub recon_p: f64,
    pub entropy: f64,
    pub recon_t_masked: f64,
    pub l1: f64,
    pub lambda_scale: f64,
    pub inner_prod: f64,
    pub total_p: f64,
    pub total_t: f64,
}

impl LossReport {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("recon_P", self.recon_p),
            ("entropy", self.entropy),
            ("recon_T_masked", self.recon_t_masked),
            ("l1", self.l1),
            ("lambda_scale", self.lambda_scale),
            ("inner_prod", self.inner_prod),
            ("total_P", self.total_p),
            ("total_T", self.total_t),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn check_lengths(xs: &[Var], ys: &[Var]) -> Result<(), ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::Sequence(format!(
            "{} observed frames vs {} reconstructed",
            xs.len(),
            ys.len()
        )));
    }
    Ok(())
}

fn discounted_sum(
    tape: &mut Tape,
    xs: &[Var],
    ys: &[Var],
    r: f64,
    residual: impl Fn(&mut Tape, Var, Var) -> Result<Var, AdError>,
) -> Result<Var, ModelError> {
    check_lengths(xs, ys)?;
    let mut total: Option<Var> = None;
    let mut weight = 1.0;
    for i in 1..xs.len() {
        weight *= r;
        let diff = residual(tape, xs[i], ys[i])?;
        let sq = tape.square(diff)?;
        let s = tape.sum(sq)?;
        let term = tape.scale(s, weight)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// `Σ_{i=1}^{N} r^i ‖X_i − Y_i‖²`.
pub fn recon_loss_patterns(tape: &mut Tape, xs: &[Var], ys: &[Var], r: f64) -> Result<Var, ModelError> {
    discounted_sum(tape, xs, ys, r, |t, x, y| t.sub(x, y))
}

/// `Σ_{i=1}^{N} r^i ‖X_i − Y_i ⊙ X_i‖²`.
pub fn masked_recon_loss(tape: &mut Tape, xs: &[Var], ys: &[Var], r: f64) -> Result<Var, ModelError> {
    discounted_sum(tape, xs, ys, r, |t, x, y| {
        let masked = t.mul(y, x)?;
        t.sub(x, masked)
    })
}

/// Area fraction of each pattern on the support of `x0`: a tensor `[L]`
/// computed outside the tape, for reporting.
pub fn pattern_areas(weights: &Tensor, x0: &Image) -> Result<Vec<f64>, ModelError> {
    let support = x0.support(0.0);
    let count = support.iter().filter(|s| **s).count();
    if count == 0 {
        return Err(ModelError::EmptySupport);
    }
    let plane = x0.data().len();
    if weights.len() % plane != 0 {
        return Err(ModelError::Dims(format!("weights {:?} vs image plane {plane}", weights.shape())));
    }
    Ok(weights
        .data()
        .chunks_exact(plane)
        .map(|w| w.iter().zip(&support).filter(|(_, s)| **s).map(|(v, _)| *v).sum::<f64>() / count as f64)
        .collect())
}

/// `−Σ_l Q_l ln(Q_l + ε)` with `Q_l` the share of pattern `l` on the
/// support of `x0`. `weights` is `[L, H, W]`.
pub fn pattern_entropy(tape: &mut Tape, weights: Var, x0: &Image) -> Result<Var, ModelError> {
    let support = x0.support(0.0);
    let count = support.iter().filter(|s| **s).count();
    if count == 0 {
        return Err(ModelError::EmptySupport);
    }
    let shape = tape.value(weights).shape().to_vec();
    if shape.len() != 3 || shape[1] != x0.height() || shape[2] != x0.width() {
        return Err(ModelError::Dims(format!(
            "weights {shape:?} vs {}x{} image",
            x0.height(),
            x0.width()
        )));
    }
    let inv = 1.0 / count as f64;
    let mask_data = support.iter().map(|s| if *s { inv } else { 0.0 }).collect();
    let mask = tape.constant(Tensor::from_parts(shape[1..].to_vec(), mask_data));
    let mut total: Option<Var> = None;
    for l in 0..shape[0] {
        let w = tape.select(weights, l)?;
        let masked = tape.mul(w, mask)?;
        let q = tape.sum(masked)?;
        let log_q = tape.log(q)?;
        let term = tape.mul(q, log_q)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let total = total.expect("at least one pattern");
    Ok(tape.neg(total)?)
}

/// Entropy of a plain area distribution, with the same `ε` as the tape.
pub fn entropy_of(areas: &[f64]) -> f64 {
    -areas
        .iter()
        .map(|q| q * libm::log(q + crate::autodiff::LOG_EPS))
        .sum::<f64>()
}

/// `Σ_k ‖θ_k‖₁` over packed `[A | b]` nodes.
pub fn l1_reg(tape: &mut Tape, thetas: &[Var]) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for theta in thetas {
        let a = tape.abs(*theta)?;
        let s = tape.sum(a)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// `Σ_k Σ_{l,i} |λ_{k,l,i} − sg(λ_{k,l,i} / s_k)|` with
/// `s_k = max_l |λ_{k,l,N}|`; transformers with `s_k < INERT_SCALE` add 0.
/// `lambda` is `[K, L, N]` holding `λ` for `i = 1..N` (the `i = 0` entries
/// are zero and contribute nothing).
pub fn lambda_scale_loss(tape: &mut Tape, lambda: Var) -> Result<Var, ModelError> {
    lambda_scale_loss_with(tape, lambda, None)
}

/// `s_k = max_l |λ_{k,l,N}|` for a `[K, L, N]` table.
pub fn lambda_scales(lambda: &Tensor) -> Result<Vec<f64>, ModelError> {
    let shape = lambda.shape();
    if shape.len() != 3 || shape[2] == 0 {
        return Err(ModelError::Dims(format!("expected [K, L, N] lambda table, got {shape:?}")));
    }
    let (patterns, steps) = (shape[1], shape[2]);
    Ok((0..shape[0])
        .map(|k| {
            (0..patterns)
                .map(|l| libm::fabs(lambda.data()[(k * patterns + l) * steps + steps - 1]))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// As [`lambda_scale_loss`], optionally taking the stop-gradient targets
/// `λ/s_k` (and the inert test) from a fixed `reference` table instead of
/// the live value of `lambda`. With the reference equal to the live value
/// this is the same loss; holding it fixed gives a function whose plain
/// derivative matches the stop-gradient one, which finite-difference checks
/// need.
pub fn lambda_scale_loss_with(tape: &mut Tape, lambda: Var, reference: Option<&Tensor>) -> Result<Var, ModelError> {
    let shape = tape.value(lambda).shape().to_vec();
    if shape.len() != 3 || shape[2] == 0 {
        return Err(ModelError::Dims(format!("expected [K, L, N] lambda table, got {shape:?}")));
    }
    let live = tape.value(lambda).clone();
    let fixed = reference.is_some();
    let reference = reference.unwrap_or(&live);
    if reference.shape() != shape.as_slice() {
        return Err(ModelError::Dims(format!(
            "reference table {:?} does not match {shape:?}",
            reference.shape()
        )));
    }
    let plane = shape[1] * shape[2];
    let scales = lambda_scales(reference)?;
    let mut total: Option<Var> = None;
    for (k, &scale) in scales.iter().enumerate() {
        if scale < INERT_SCALE {
            continue;
        }
        let slice = tape.select(lambda, k)?;
        let target = if fixed {
            let data = reference.data()[k * plane..(k + 1) * plane].iter().map(|v| v / scale).collect();
            tape.constant(Tensor::from_parts(shape[1..].to_vec(), data))
        } else {
            let normalized = tape.scale(slice, 1.0 / scale)?;
            tape.stop_grad(normalized)?
        };
        let diff = tape.sub(slice, target)?;
        let abs = tape.abs(diff)?;
        let s = tape.sum(abs)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// `Σ_{i<j} ⟨vec A_i, vec A_j⟩² + ⟨b_i, b_j⟩²` over packed `[A | b]` nodes.
pub fn inner_product_loss(tape: &mut Tape, thetas: &[Var]) -> Result<Var, ModelError> {
    let mask_a = tape.constant(Tensor::from_parts(alloc::vec![2, 3], alloc::vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0]));
    let mask_b = tape.constant(Tensor::from_parts(alloc::vec![2, 3], alloc::vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
    let mut total: Option<Var> = None;
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let prod = tape.mul(thetas[i], thetas[j])?;
            let mut pair: Option<Var> = None;
            for mask in [mask_a, mask_b] {
                let part = tape.mul(prod, mask)?;
                let dot = tape.sum(part)?;
                let sq = tape.square(dot)?;
                pair = Some(match pair {
                    None => sq,
                    Some(p) => tape.add(p, sq)?,
                });
            }
            let pair = pair.expect("two masks");
            total = Some(match total {
                None => pair,
                Some(t) => tape.add(t, pair)?,
            });
        }
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// Both objectives recorded on one tape.
#[derive(Debug, Clone)]
pub struct ObjectiveGraph {
    pub scene: SceneGraph,
    pub total_p: Var,
    pub total_t: Var,
    pub report: LossReport,
}

/// Stage that failed while recording the objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct TermError {
    pub term: &'static str,
    pub error: ModelError,
}

fn weighted_sum(tape: &mut Tape, terms: &[(Var, f64)]) -> Result<Var, AdError> {
    let mut acc = terms[0].0;
    if terms[0].1 != 1.0 {
        acc = tape.scale(acc, terms[0].1)?;
    }
    for (v, w) in &terms[1..] {
        let scaled = tape.scale(*v, *w)?;
        acc = tape.add(acc, scaled)?;
    }
    Ok(acc)
}

impl ObjectiveGraph {
    /// Records the reconstruction and every loss term from parameter leaves.
    pub fn build(
        tape: &mut Tape,
        vars: &ParamVars,
        seq: &ObservedSequence,
        weights: &LossWeights,
    ) -> Result<Self, TermError> {
        Self::build_with(tape, vars, seq, weights, None)
    }

    /// [`Self::build`] with the λ-scale targets taken from a fixed
    /// `[K, L, N]` reference table; see [`lambda_scale_loss_with`].
    pub fn build_with(
        tape: &mut Tape,
        vars: &ParamVars,
        seq: &ObservedSequence,
        weights: &LossWeights,
        reference: Option<&Tensor>,
    ) -> Result<Self, TermError> {
        let tag = |term: &'static str| move |error: ModelError| TermError { term, error };
        let tag_ad = |term: &'static str| move |error: AdError| TermError {
            term,
            error: error.into(),
        };

        let scene = SceneGraph::build(tape, vars, seq.first()).map_err(tag("reconstruction"))?;
        if scene.frames.len() != seq.frames().len() {
            return Err(TermError {
                term: "reconstruction",
                error: ModelError::Sequence(format!(
                    "model has {} steps, sequence has {}",
                    scene.frames.len() - 1,
                    seq.steps()
                )),
            });
        }
        let xs: Vec<Var> = seq.frames().iter().map(|f| tape.constant(f.to_tensor())).collect();

        let recon_p = recon_loss_patterns(tape, &xs, &scene.frames, weights.r).map_err(tag("recon_P"))?;
        let entropy = pattern_entropy(tape, scene.weights, seq.first()).map_err(tag("entropy"))?;
        let recon_t = masked_recon_loss(tape, &xs, &scene.frames, weights.r).map_err(tag("recon_T_masked"))?;
        let l1 = l1_reg(tape, &vars.thetas).map_err(tag("l1"))?;
        let lambda_scale = lambda_scale_loss_with(tape, scene.lambda, reference).map_err(tag("lambda_scale"))?;
        let inner = inner_product_loss(tape, &vars.thetas).map_err(tag("inner_prod"))?;

        let total_p = weighted_sum(tape, &[(recon_p, 1.0), (entropy, weights.alpha)]).map_err(tag_ad("total_P"))?;
        let total_t = weighted_sum(
            tape,
            &[
                (recon_t, 1.0),
                (l1, weights.beta),
                (lambda_scale, weights.gamma),
                (inner, weights.delta),
            ],
        )
        .map_err(tag_ad("total_T"))?;

        let item = |v: Var| tape.value(v).data()[0];
        let report = LossReport {
            recon_p: item(recon_p),
            entropy: item(entropy),
            recon_t_masked: item(recon_t),
            l1: item(l1),
            lambda_scale: item(lambda_scale),
            inner_prod: item(inner),
            total_p: item(total_p),
            total_t: item(total_t),
        };
        Ok(Self {
            scene,
            total_p,
            total_t,
            report,
        })
    }
}

/// Pattern objective value and report at `state`.
pub fn objective_p(seq: &ObservedSequence, state: &ModelState, weights: &LossWeights) -> Result<(f64, LossReport), TermError> {
    let mut tape = Tape::new();
    let vars = state.register(&mut tape);
    let g = ObjectiveGraph::build(&mut tape, &vars, seq, weights)?;
    Ok((g.report.total_p, g.report))
}

/// Transformer objective value and report at `state`.
pub fn objective_t(seq: &ObservedSequence, state: &ModelState, weights: &LossWeights) -> Result<(f64, LossReport), TermError> {
    let mut tape = Tape::new();
    let vars = state.register(&mut tape);
    let g = ObjectiveGraph::build(&mut tape, &vars, seq, weights)?;
    Ok((g.report.total_t, g.report))
}

/// Objective closures over the parameter list of [`ModelState::to_params`],
/// suitable for [`crate::autodiff::grad_check`].
pub fn objective_fn<'a>(
    seq: &'a ObservedSequence,
    weights: &'a LossWeights,
    which: Objective,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var, AdError> + 'a {
    objective_fn_with(seq, weights, which, None)
}

/// [`objective_fn`] with the λ-scale targets taken from a fixed reference
/// table; see [`lambda_scale_loss_with`].
pub fn objective_fn_with<'a>(
    seq: &'a ObservedSequence,
    weights: &'a LossWeights,
    which: Objective,
    reference: Option<Tensor>,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var, AdError> + 'a {
    move |tape: &mut Tape, params: &[Var]| {
        let vars = ParamVars {
            logits: params[0],
            thetas: params[1..params.len() - 1].to_vec(),
            delta_lambda: params[params.len() - 1],
        };
        let g = ObjectiveGraph::build_with(tape, &vars, seq, weights, reference.as_ref()).map_err(|e| match e.error {
            ModelError::Ad(ad) => ad,
            _ => AdError::NonFinite { op: e.term },
        })?;
        Ok(match which {
            Objective::Patterns => g.total_p,
            Objective::Transformers => g.total_t,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Patterns,
    Transformers,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frames(tape: &mut Tape, imgs: &[Vec<f64>], h: usize, w: usize) -> Vec<Var> {
        imgs.iter()
            .map(|d| tape.constant(Tensor::new(vec![h, w], d.clone()).unwrap()))
            .collect()
    }

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn recon_examples() {
        let mut t = Tape::new();
        let x = frames(&mut t, &[vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]], 2, 2);
        let y = frames(&mut t, &[vec![0.0; 4], vec![0.0; 4]], 2, 2);
        let same = recon_loss_patterns(&mut t, &x, &x, 0.9).unwrap();
        assert_eq!(scalar(&t, same), 0.0);
        let one = recon_loss_patterns(&mut t, &x, &y, 0.9).unwrap();
        assert!((scalar(&t, one) - 0.9).abs() < 1e-15);
        assert!(recon_loss_patterns(&mut t, &x, &y[..1], 0.9).is_err());
    }

    #[test]
    fn uniform_error_closed_form() {
        let e = 0.3;
        let mut t = Tape::new();
        let x = frames(&mut t, &[vec![0.0; 225], vec![0.0; 225], vec![0.0; 225]], 15, 15);
        let y = frames(&mut t, &[vec![e; 225], vec![e; 225], vec![e; 225]], 15, 15);
        let l = recon_loss_patterns(&mut t, &x, &y, 0.5).unwrap();
        let expect = 225.0 * e * e * (0.5 + 0.25);
        assert!((scalar(&t, l) - expect).abs() < 1e-12);
    }

    #[test]
    fn masked_examples() {
        let mut t = Tape::new();
        let x = frames(&mut t, &[vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0, 0.0]], 2, 2);
        let ones = frames(&mut t, &[vec![1.0; 4], vec![1.0, 7.0, -3.0, 1.0], vec![1.0, 1.0, 1.0, 9.0]], 2, 2);
        let l = masked_recon_loss(&mut t, &x, &ones, 0.9).unwrap();
        assert_eq!(scalar(&t, l), 0.0);

        let zeros = frames(&mut t, &[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], 2, 2);
        let l = masked_recon_loss(&mut t, &x, &zeros, 0.9).unwrap();
        assert!((scalar(&t, l) - (0.9 * 2.0 + 0.81 * 3.0)).abs() < 1e-15);

        let half = frames(&mut t, &[vec![0.5; 4], vec![0.5; 4], vec![0.5; 4]], 2, 2);
        let l = masked_recon_loss(&mut t, &x, &half, 0.9).unwrap();
        assert!((scalar(&t, l) - (0.9 * 0.25 * 2.0 + 0.81 * 0.25 * 3.0)).abs() < 1e-15);
    }

    fn entropy_from_areas(areas: &[f64]) -> f64 {
        // one foreground pixel per pattern-share: weights equal to Q at every
        // support pixel reproduce Q exactly
        let x0 = Image::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut w = Vec::new();
        for q in areas {
            w.extend([*q, *q, 0.3, 0.3]);
        }
        let mut t = Tape::new();
        let wv = t.constant(Tensor::new(vec![areas.len(), 2, 2], w).unwrap());
        let e = pattern_entropy(&mut t, wv, &x0).unwrap();
        scalar(&t, e)
    }

    #[test]
    fn entropy_examples() {
        assert!(entropy_from_areas(&[1.0, 0.0, 0.0]).abs() < 1e-10);
        let third = 1.0 / 3.0;
        assert!((entropy_from_areas(&[third, third, third]) - libm::log(3.0)).abs() < 1e-10);
        assert!((entropy_from_areas(&[0.5, 0.5, 0.0]) - 0.693_147_180_559_945_3).abs() < 1e-10);
    }

    #[test]
    fn entropy_rejects_empty_support() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::filled(&[2, 2, 2], 0.5));
        assert_eq!(pattern_entropy(&mut t, w, &Image::zeros(2, 2)).unwrap_err(), ModelError::EmptySupport);
    }

    fn packed(a: [f64; 4], b: [f64; 2]) -> Tensor {
        Tensor::new(vec![2, 3], vec![a[0], a[1], b[0], a[2], a[3], b[1]]).unwrap()
    }

    #[test]
    fn l1_examples() {
        let mut t = Tape::new();
        let z = t.leaf(packed([0.0; 4], [0.0; 2]));
        let l = l1_reg(&mut t, &[z]).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        let id = t.leaf(packed([1.0, 0.0, 0.0, 1.0], [1.0, -1.0]));
        let l = l1_reg(&mut t, &[id]).unwrap();
        assert_eq!(scalar(&t, l), 4.0);
        let table = t.leaf(packed([-0.0049, 0.0095, -0.0014, -0.0024], [0.97, 0.014]));
        let l = l1_reg(&mut t, &[table]).unwrap();
        assert!((scalar(&t, l) - 1.0022).abs() < 1e-12);
        // subgradient at zero is zero
        let root = l1_reg(&mut t, &[z]).unwrap();
        let g = t.backward(root).unwrap();
        assert!(g.wrt(z).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lambda_scale_examples() {
        let mut t = Tape::new();
        let unit = t.leaf(Tensor::new(vec![1, 2, 2], vec![0.5, 1.0, 0.2, 0.7]).unwrap());
        let l = lambda_scale_loss(&mut t, unit).unwrap();
        assert_eq!(scalar(&t, l), 0.0);

        let two = t.leaf(Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap());
        let l = lambda_scale_loss(&mut t, two).unwrap();
        assert_eq!(scalar(&t, l), 1.0);
        // the target is a constant: d/dλ |λ − λ/2| = 1 at λ = 2
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(two).data(), &[1.0]);

        let zero = t.leaf(Tensor::zeros(&[2, 3, 4]));
        let l = lambda_scale_loss(&mut t, zero).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
    }

    #[test]
    fn negative_quantities_use_magnitude() {
        let mut t = Tape::new();
        let neg = t.leaf(Tensor::new(vec![1, 2, 1], vec![-2.0, -1.0]).unwrap());
        let l = lambda_scale_loss(&mut t, neg).unwrap();
        assert!((scalar(&t, l) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        let mut t = Tape::new();
        let single = t.leaf(packed([1.0, 2.0, 3.0, 4.0], [1.0, 1.0]));
        let l = inner_product_loss(&mut t, &[single]).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        let bx = t.leaf(packed([0.0; 4], [1.0, 0.0]));
        let by = t.leaf(packed([0.0; 4], [0.0, 1.0]));
        let l = inner_product_loss(&mut t, &[bx, by]).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        let l = inner_product_loss(&mut t, &[bx, bx]).unwrap();
        assert_eq!(scalar(&t, l), 1.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { r: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { r: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossWeights { gamma: -1.0, ..Default::default() }.validate().is_err());
    }
}
