//! Post-training analysis: active patterns, transformer classes, translation
//! directions, vector fields and recovery of known ground truth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::GroundTruth;
use crate::error::ModelError;
use crate::image::Image;
use crate::lie::{compose, integrate_flow, AffineMap, FlowParams};
use crate::objectives::{pattern_areas, LossReport};
use crate::scene::{cumulative_lambda, pattern_weights, ModelState, ObservedSequence};

pub const DEFAULT_TAU_P: f64 = 0.05;
pub const DEFAULT_TAU_ID: f64 = 0.1;
/// Threshold applied to primitives before comparing supports.
pub const SUPPORT_THRESHOLD: f64 = 0.5;

/// Number of areas above `tau_p`, and the areas themselves.
pub fn count_active_patterns(weights: &crate::Tensor, x0: &Image, tau_p: f64) -> Result<(usize, Vec<f64>), ModelError> {
    if !(tau_p > 0.0 && tau_p < 1.0) {
        return Err(ModelError::Config(format!("tau_p must lie in (0, 1), got {tau_p}")));
    }
    let q = pattern_areas(weights, x0)?;
    Ok((count_above(&q, tau_p), q))
}

pub fn count_above(areas: &[f64], tau_p: f64) -> usize {
    areas.iter().filter(|q| **q > tau_p).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformerClass {
    Identity,
    Active,
}

pub fn frobenius(a: &[[f64; 2]; 2]) -> f64 {
    libm::sqrt(a.iter().flatten().map(|v| v * v).sum())
}

pub fn norm2(v: [f64; 2]) -> f64 {
    libm::hypot(v[0], v[1])
}

/// `‖A‖_F + ‖b‖₂`.
pub fn transformer_magnitude(theta: &FlowParams) -> f64 {
    frobenius(&theta.a) + norm2(theta.b)
}

pub fn classify_transformers(thetas: &[FlowParams], tau_id: f64) -> Result<Vec<TransformerClass>, ModelError> {
    if !(tau_id > 0.0) {
        return Err(ModelError::Config(format!("tau_id must be positive, got {tau_id}")));
    }
    Ok(thetas
        .iter()
        .map(|t| {
            if transformer_magnitude(t) < tau_id {
                TransformerClass::Identity
            } else {
                TransformerClass::Active
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub transformer: usize,
    /// `b / ‖b‖`; `None` when `‖b‖` is too small to define one.
    pub direction: Option<[f64; 2]>,
    /// `‖b‖ / (‖b‖ + ‖A‖_F)`.
    pub purity: f64,
    pub residual_a: f64,
    /// `‖A‖_F < 0.1 ‖b‖`, i.e. the linear part is negligible.
    pub pure_translation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub first: usize,
    pub second: usize,
    /// `|det[b̂_i b̂_j]|`: 1 for orthogonal, 0 for parallel.
    pub independence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAnalysis {
    pub directions: Vec<Direction>,
    pub pairs: Vec<PairScore>,
}

const MIN_TRANSLATION: f64 = 1e-9;

/// Directions of the transformers named by `indices`; pairs skip those
/// without a translational part.
pub fn direction_analysis(thetas: &[FlowParams], indices: &[usize]) -> Result<DirectionAnalysis, ModelError> {
    if indices.is_empty() {
        return Err(ModelError::Config("direction analysis needs at least one transformer".into()));
    }
    let mut directions = Vec::with_capacity(indices.len());
    for &k in indices {
        let theta = thetas
            .get(k)
            .ok_or_else(|| ModelError::OutOfRange(format!("transformer {k} of {}", thetas.len())))?;
        let nb = norm2(theta.b);
        let na = frobenius(&theta.a);
        let direction = (nb >= MIN_TRANSLATION).then(|| [theta.b[0] / nb, theta.b[1] / nb]);
        directions.push(Direction {
            transformer: k,
            direction,
            purity: if nb + na > 0.0 { nb / (nb + na) } else { 0.0 },
            residual_a: na,
            pure_translation: direction.is_some() && na < 0.1 * nb,
        });
    }
    let mut pairs = Vec::new();
    for i in 0..directions.len() {
        for j in i + 1..directions.len() {
            if let (Some(u), Some(v)) = (directions[i].direction, directions[j].direction) {
                pairs.push(PairScore {
                    first: directions[i].transformer,
                    second: directions[j].transformer,
                    independence: libm::fabs(u[0] * v[1] - u[1] * v[0]).min(1.0),
                });
            }
        }
    }
    Ok(DirectionAnalysis { directions, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// `A [x, y]ᵀ + b` on a `density × density` grid spanning `[-1, 1]²`,
/// rows of constant `y` from top to bottom.
pub fn field_samples(theta: &FlowParams, density: usize) -> Result<Vec<FieldSample>, ModelError> {
    if density < 2 {
        return Err(ModelError::Config(format!("grid density must be at least 2, got {density}")));
    }
    let coord = |i: usize| 2.0 * i as f64 / (density - 1) as f64 - 1.0;
    let mut out = Vec::with_capacity(density * density);
    for r in 0..density {
        for c in 0..density {
            let (x, y) = (coord(c), coord(r));
            let [vx, vy] = theta.field_at(x, y);
            out.push(FieldSample { x, y, vx, vy });
        }
    }
    Ok(out)
}

/// Map taking pattern `l` from frame 0 to frame `i`: `T_1(λ_1) ∘ … ∘ T_K(λ_K)`.
pub fn composite_map(state: &ModelState, l: usize, i: usize) -> Result<AffineMap, ModelError> {
    if l >= state.patterns() || i > state.steps() {
        return Err(ModelError::OutOfRange(format!(
            "pattern {l}, frame {i} (L={}, N={})",
            state.patterns(),
            state.steps()
        )));
    }
    let lambda = cumulative_lambda(state.delta_lambda())?;
    let n1 = state.steps() + 1;
    let mut map = AffineMap::IDENTITY;
    for (k, theta) in state.thetas().iter().enumerate().rev() {
        let lam = lambda.data()[(k * state.patterns() + l) * n1 + i];
        map = compose(&integrate_flow(theta, lam)?, &map);
    }
    Ok(map)
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-frame mean of `(X_i − Y_i ⊙ X_i)²` over the support of `X_i`, frames `1..=N`.
pub fn masked_frame_errors(seq: &ObservedSequence, recon: &[Image]) -> Result<Vec<f64>, ModelError> {
    if recon.len() != seq.frames().len() {
        return Err(ModelError::Sequence(format!(
            "{} reconstructed frames for {} observed",
            recon.len(),
            seq.frames().len()
        )));
    }
    Ok(seq.frames()[1..]
        .iter()
        .zip(&recon[1..])
        .map(|(x, y)| {
            let (mut sum, mut count) = (0.0, 0usize);
            for (xv, yv) in x.data().iter().zip(y.data()) {
                if *xv > 0.0 {
                    let d = xv - yv * xv;
                    sum += d * d;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecovery {
    pub object: usize,
    pub glyph: alloc::string::String,
    /// Best-matching primitive and its IoU with the object's frame-0 support.
    pub pattern: usize,
    pub iou: f64,
    /// Per frame `1..=N`, distance in pixels between predicted and true
    /// displacement of the object's centroid.
    pub displacement_errors: Vec<f64>,
}

impl ObjectRecovery {
    pub fn max_displacement_error(&self) -> f64 {
        self.displacement_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Matches every ground-truth object to its best primitive and measures how
/// well that primitive's composite maps reproduce the object's motion.
pub fn recover_objects(state: &ModelState, x0: &Image, truth: &GroundTruth) -> Result<Vec<ObjectRecovery>, ModelError> {
    let frame = state.frame();
    let primitives = state.primitives(x0)?;
    let masks: Vec<Vec<bool>> = primitives.iter().map(|p| p.support(SUPPORT_THRESHOLD)).collect();
    let (px, py) = frame.pitch();
    let mut out = Vec::with_capacity(truth.objects.len());
    for (oi, object) in truth.objects.iter().enumerate() {
        if object.mask.len() != frame.height * frame.width {
            return Err(ModelError::Dims(format!("object {oi} mask does not match the model frame")));
        }
        let (pattern, score) = masks
            .iter()
            .enumerate()
            .map(|(l, m)| (l, iou(m, &object.mask)))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });

        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
        for (idx, _) in object.mask.iter().enumerate().filter(|(_, m)| **m) {
            let (x, y) = frame.pixel_to_normalized(idx / frame.width, idx % frame.width)?;
            sx += x;
            sy += y;
            count += 1;
        }
        let centroid = if count == 0 { [0.0, 0.0] } else { [sx / count as f64, sy / count as f64] };

        let mut errors = Vec::with_capacity(state.steps());
        for i in 1..=state.steps() {
            let moved = composite_map(state, pattern, i)?.apply(centroid);
            let dcol = (moved[0] - centroid[0]) / px;
            let drow = (moved[1] - centroid[1]) / py;
            let (tr, tc) = object.displacements.get(i).copied().ok_or_else(|| {
                ModelError::Sequence(format!("ground truth for object {oi} has no frame {i}"))
            })?;
            errors.push(libm::hypot(drow - tr as f64, dcol - tc as f64));
        }
        out.push(ObjectRecovery {
            object: oi,
            glyph: object.glyph.clone(),
            pattern,
            iou: score,
            displacement_errors: errors,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub active_pattern_count: usize,
    pub pattern_areas: Vec<f64>,
    pub transformer_classes: Vec<TransformerClass>,
    pub transformer_magnitudes: Vec<f64>,
    /// Present when at least one transformer is active.
    pub directions: Option<DirectionAnalysis>,
    pub masked_frame_mse: Vec<f64>,
    pub losses: Option<LossReport>,
    /// Present when the dataset carries ground truth.
    pub recovery: Option<Vec<ObjectRecovery>>,
}

impl EvalReport {
    pub fn active_transformers(&self) -> Vec<usize> {
        active_indices(&self.transformer_classes)
    }

    pub fn identity_count(&self) -> usize {
        self.transformer_classes.len() - self.active_transformers().len()
    }

    pub fn max_masked_mse(&self) -> f64 {
        self.masked_frame_mse.iter().copied().fold(0.0, f64::max)
    }
}

fn active_indices(classes: &[TransformerClass]) -> Vec<usize> {
    classes
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == TransformerClass::Active)
        .map(|(k, _)| k)
        .collect()
}

pub fn evaluate(
    state: &ModelState,
    seq: &ObservedSequence,
    truth: Option<&GroundTruth>,
    losses: Option<LossReport>,
    tau_p: f64,
    tau_id: f64,
) -> Result<EvalReport, ModelError> {
    let x0 = seq.first();
    let weights = pattern_weights(state.logits())?;
    let (active_pattern_count, pattern_areas) = count_active_patterns(&weights, x0, tau_p)?;
    let classes = classify_transformers(state.thetas(), tau_id)?;
    let active = active_indices(&classes);
    let directions = if active.is_empty() {
        None
    } else {
        Some(direction_analysis(state.thetas(), &active)?)
    };
    let recon = state.reconstruct(x0)?;
    let masked_frame_mse = masked_frame_errors(seq, &recon)?;
    let recovery = truth.map(|t| recover_objects(state, x0, t)).transpose()?;
    Ok(EvalReport {
        active_pattern_count,
        pattern_areas,
        transformer_classes: classes,
        transformer_magnitudes: state.thetas().iter().map(transformer_magnitude).collect(),
        directions,
        masked_frame_mse,
        losses,
        recovery,
    })
}

/// Outcome of the recovery checks on a two-object scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryVerdict {
    pub reconstruction: bool,
    pub patterns: bool,
    pub transformers: bool,
    pub displacements: bool,
}

impl RecoveryVerdict {
    pub fn all(&self) -> bool {
        self.reconstruction && self.patterns && self.transformers && self.displacements
    }
}

/// Checks a report against fixed recovery thresholds. `expected_active` is
/// the number of independent motions in the scene; with two, the active
/// pair must also be near-orthogonal.
pub fn judge(report: &EvalReport, expected_active: usize) -> RecoveryVerdict {
    let reconstruction = report.max_masked_mse() < 1e-2;
    let objects = report.recovery.as_deref().unwrap_or(&[]);
    let mut used = vec![false; report.pattern_areas.len()];
    let mut distinct = true;
    for o in objects {
        if used.get(o.pattern).copied().unwrap_or(true) {
            distinct = false;
        } else {
            used[o.pattern] = true;
        }
    }
    let patterns = report.active_pattern_count == objects.len()
        && !objects.is_empty()
        && distinct
        && objects.iter().all(|o| o.iou > 0.8);
    let active = report.active_transformers();
    let transformers = report.identity_count() >= 1
        && active.len() == expected_active
        && match expected_active {
            2 => report
                .directions
                .as_ref()
                .map(|d| d.pairs.len() == 1 && d.pairs[0].independence > 0.8)
                .unwrap_or(false),
            _ => true,
        };
    let displacements = !objects.is_empty() && objects.iter().all(|o| o.max_displacement_error() <= 0.5);
    RecoveryVerdict {
        reconstruction,
        patterns,
        transformers,
        displacements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(a: [[f64; 2]; 2], b: [f64; 2]) -> FlowParams {
        FlowParams::new(a, b)
    }

    #[test]
    fn active_pattern_counts() {
        assert_eq!(count_above(&[0.5, 0.49, 0.01], 0.05), 2);
        assert_eq!(count_above(&[1.0 / 3.0; 3], 0.05), 3);
        assert_eq!(count_above(&[1.0, 0.0, 0.0], 0.05), 1);
    }

    #[test]
    fn tabulated_transformers() {
        let t1 = fp([[0.016, -0.004], [0.011, 0.009]], [0.00056, 0.023]);
        let t2 = fp([[0.0; 2]; 2], [0.97, 0.014]);
        let classes = classify_transformers(&[t1, t2, FlowParams::ZERO], DEFAULT_TAU_ID).unwrap();
        assert_eq!(
            classes,
            vec![TransformerClass::Identity, TransformerClass::Active, TransformerClass::Identity]
        );
    }

    #[test]
    fn independence_of_tabulated_axes() {
        let t2 = fp([[0.0; 2]; 2], [0.97, 0.014]);
        let t3 = fp([[0.0; 2]; 2], [0.046, 0.999]);
        let d = direction_analysis(&[t2, t3], &[0, 1]).unwrap();
        let u = [0.97 / libm::hypot(0.97, 0.014), 0.014 / libm::hypot(0.97, 0.014)];
        let v = [0.046 / libm::hypot(0.046, 0.999), 0.999 / libm::hypot(0.046, 0.999)];
        let expect = (u[0] * v[1] - u[1] * v[0]).abs();
        assert!((d.pairs[0].independence - expect).abs() < 1e-15);
        assert!((d.pairs[0].independence - 0.998).abs() < 1e-3);
        assert!(d.directions.iter().all(|x| x.pure_translation && x.purity == 1.0));
    }

    #[test]
    fn parallel_and_orthogonal_pairs() {
        let par = [fp([[0.0; 2]; 2], [1.0, 0.0]), fp([[0.0; 2]; 2], [2.0, 0.0])];
        assert_eq!(direction_analysis(&par, &[0, 1]).unwrap().pairs[0].independence, 0.0);
        let ort = [fp([[0.0; 2]; 2], [1.0, 0.0]), fp([[0.0; 2]; 2], [0.0, 1.0])];
        assert_eq!(direction_analysis(&ort, &[0, 1]).unwrap().pairs[0].independence, 1.0);
    }

    #[test]
    fn rotation_has_no_direction() {
        let rot = fp([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]);
        let d = direction_analysis(&[rot, fp([[0.0; 2]; 2], [1.0, 0.0])], &[0, 1]).unwrap();
        assert_eq!(d.directions[0].direction, None);
        assert!(d.pairs.is_empty());
        assert!(direction_analysis(&[rot], &[]).is_err());
    }

    #[test]
    fn field_examples() {
        assert!(field_samples(&FlowParams::ZERO, 3)
            .unwrap()
            .iter()
            .all(|s| s.vx == 0.0 && s.vy == 0.0));
        let right = field_samples(&fp([[0.0; 2]; 2], [1.0, 0.0]), 4).unwrap();
        assert_eq!(right.len(), 16);
        assert!(right.iter().all(|s| s.vx == 1.0 && s.vy == 0.0));
        let rot = field_samples(&fp([[0.0, -1.0], [1.0, 0.0]], [0.0, 0.0]), 5).unwrap();
        for s in rot {
            assert_eq!((s.vx, s.vy), (-s.y, s.x));
        }
        assert!(field_samples(&FlowParams::ZERO, 1).is_err());
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[true, true, false], &[true, false, false]), 0.5);
        assert_eq!(iou(&[false], &[false]), 1.0);
        assert_eq!(iou(&[true], &[false]), 0.0);
    }
}
