//! Alternating optimization of transformers, transformation quantities and
//! patterns.
//!
//! Each epoch runs two forward passes. The first records the transformer
//! objective; one backward pass yields the gradients for `θ` and `Δλ`, which
//! are then applied in that order. The second forward, at the updated `θ`
//! and `Δλ`, records the pattern objective and updates the pattern logits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{ModelError, TrainError};
use crate::lie::FlowParams;
use crate::objectives::{LossReport, LossWeights, ObjectiveGraph, TermError};
use crate::optim::{AdamConfig, AdamGroup, OptimizerState};
use crate::scene::{ModelState, ObservedSequence};
use crate::tensor::Tensor;

/// Standard deviations of the initial parameter draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitScales {
    pub logits: f64,
    pub theta: f64,
    pub delta_lambda: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self {
            logits: 0.01,
            theta: 0.1,
            delta_lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patterns: usize,
    pub transformers: usize,
    pub epochs_max: usize,
    pub lr_theta: f64,
    pub lr_lambda: f64,
    pub lr_pattern: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub convergence_tol: f64,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
    pub init: InitScales,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patterns: 3,
            transformers: 3,
            epochs_max: 20_000,
            lr_theta: 0.01,
            lr_lambda: 0.01,
            lr_pattern: 0.05,
            weights: LossWeights::default(),
            seed: 0,
            convergence_tol: 1e-6,
            checkpoint_every: 1000,
            adam: AdamConfig::default(),
            init: InitScales::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patterns == 0 || self.transformers == 0 {
            return Err(ModelError::Config(format!(
                "need at least one pattern and one transformer, got L={}, K={}",
                self.patterns, self.transformers
            )));
        }
        if self.epochs_max == 0 {
            return Err(ModelError::Config("epochs_max must be at least 1".into()));
        }
        for (name, lr) in [
            ("lr_theta", self.lr_theta),
            ("lr_lambda", self.lr_lambda),
            ("lr_pattern", self.lr_pattern),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(ModelError::Config(format!("{name} must be finite and nonnegative, got {lr}")));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(ModelError::Config("convergence_tol must be nonnegative".into()));
        }
        self.weights.validate()
    }
}

/// Deterministic initial state: logits, then `θ_k` (A row-major then b) by
/// `k`, then `Δλ` in `(k, l, i)` order, all from one ChaCha stream.
pub fn init(config: &TrainConfig, seq: &ObservedSequence) -> Result<ModelState, ModelError> {
    config.validate()?;
    let frame = seq.frame();
    let (l, k, n) = (config.patterns, config.transformers, seq.steps());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| ModelError::Config(format!("{e}")));

    let logit_dist = normal(config.init.logits)?;
    let logits: Vec<f64> = (0..l * frame.height * frame.width)
        .map(|_| logit_dist.sample(&mut rng))
        .collect();

    let theta_dist = normal(config.init.theta)?;
    let thetas: Vec<FlowParams> = (0..k)
        .map(|_| {
            let mut d = [0.0; 6];
            for v in d.iter_mut() {
                *v = theta_dist.sample(&mut rng);
            }
            FlowParams::new([[d[0], d[1]], [d[2], d[3]]], [d[4], d[5]])
        })
        .collect();

    let lambda_dist = normal(config.init.delta_lambda)?;
    let deltas: Vec<f64> = (0..k * l * n).map(|_| lambda_dist.sample(&mut rng)).collect();

    ModelState::new(
        frame,
        Tensor::new(alloc::vec![l, frame.height, frame.width], logits)?,
        thetas,
        Tensor::new(alloc::vec![k, l, n], deltas)?,
    )
}

/// Fresh optimizer matching `state`'s parameter shapes.
pub fn new_optimizer(state: &ModelState, config: &AdamConfig) -> OptimizerState {
    let theta_shapes: Vec<&[usize]> = (0..state.transformers()).map(|_| &[2usize, 3][..]).collect();
    OptimizerState {
        config: *config,
        theta: AdamGroup::new(&theta_shapes),
        lambda: AdamGroup::new(&[state.delta_lambda().shape()]),
        pattern: AdamGroup::new(&[state.logits().shape()]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub report: LossReport,
    /// Largest absolute change of any parameter during the epoch.
    pub max_change: f64,
}

fn term_error(epoch: usize, e: TermError) -> TrainError {
    TrainError::NonFinite {
        term: e.term,
        epoch,
        detail: format!("{}", e.error),
    }
}

fn check_terms(epoch: usize, fields: &[(&'static str, f64)]) -> Result<(), TrainError> {
    for (name, v) in fields {
        if !v.is_finite() {
            return Err(TrainError::NonFinite {
                term: name,
                epoch,
                detail: format!("value {v}"),
            });
        }
    }
    Ok(())
}

/// One alternating update. On error `state` and `optimizer` are unchanged.
pub fn epoch(
    seq: &ObservedSequence,
    state: &mut ModelState,
    optimizer: &mut OptimizerState,
    config: &TrainConfig,
    index: usize,
) -> Result<EpochOutcome, TrainError> {
    let mut next = state.clone();
    let mut opt = optimizer.clone();

    // transformer phase
    let mut tape = Tape::new();
    let vars = next.register(&mut tape);
    let first = ObjectiveGraph::build(&mut tape, &vars, seq, &config.weights).map_err(|e| term_error(index, e))?;
    let r1 = first.report;
    check_terms(
        index,
        &[
            ("recon_T_masked", r1.recon_t_masked),
            ("l1", r1.l1),
            ("lambda_scale", r1.lambda_scale),
            ("inner_prod", r1.inner_prod),
            ("total_T", r1.total_t),
        ],
    )?;
    let grads = tape
        .backward(first.total_t)
        .map_err(|e| term_error(index, TermError { term: "total_T", error: e.into() }))?;
    let theta_grads: Vec<Tensor> = vars.thetas.iter().map(|v| grads.wrt(*v)).collect();
    let lambda_grad = grads.wrt(vars.delta_lambda);
    drop(tape);

    let mut theta_tensors: Vec<Tensor> = next.thetas().iter().map(FlowParams::to_tensor).collect();
    let mut refs: Vec<&mut Tensor> = theta_tensors.iter_mut().collect();
    let mut max_change = opt
        .theta
        .update(&config.adam, config.lr_theta, &mut refs, &theta_grads)
        .map_err(TrainError::Model)?;
    for (dst, t) in next.thetas_mut().iter_mut().zip(&theta_tensors) {
        *dst = FlowParams::from_packed(t.data());
    }
    max_change = max_change.max(
        opt.lambda
            .update(&config.adam, config.lr_lambda, &mut [next.delta_lambda_mut()], &[lambda_grad])
            .map_err(TrainError::Model)?,
    );
    if next.thetas().iter().any(|t| !t.is_finite()) || !next.delta_lambda().is_finite() {
        return Err(TrainError::NonFinite {
            term: "total_T",
            epoch: index,
            detail: "transformer update produced non-finite parameters".into(),
        });
    }

    // pattern phase
    let mut tape = Tape::new();
    let vars = next.register(&mut tape);
    let second = ObjectiveGraph::build(&mut tape, &vars, seq, &config.weights).map_err(|e| term_error(index, e))?;
    let r2 = second.report;
    check_terms(
        index,
        &[("recon_P", r2.recon_p), ("entropy", r2.entropy), ("total_P", r2.total_p)],
    )?;
    let grads = tape
        .backward(second.total_p)
        .map_err(|e| term_error(index, TermError { term: "total_P", error: e.into() }))?;
    let logit_grad = grads.wrt(vars.logits);
    drop(tape);
    max_change = max_change.max(
        opt.pattern
            .update(&config.adam, config.lr_pattern, &mut [next.logits_mut()], &[logit_grad])
            .map_err(TrainError::Model)?,
    );
    if !next.logits().is_finite() {
        return Err(TrainError::NonFinite {
            term: "total_P",
            epoch: index,
            detail: "pattern update produced non-finite logits".into(),
        });
    }

    let report = LossReport {
        recon_p: r2.recon_p,
        entropy: r2.entropy,
        total_p: r2.total_p,
        recon_t_masked: r1.recon_t_masked,
        l1: r1.l1,
        lambda_scale: r1.lambda_scale,
        inner_prod: r1.inner_prod,
        total_t: r1.total_t,
    };
    *state = next;
    *optimizer = opt;
    Ok(EpochOutcome { report, max_change })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub reports: Vec<LossReport>,
    pub epochs_run: usize,
    pub converged: bool,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
}

/// Hooks called by [`fit`]. Returning `Err` stops training.
pub trait TrainObserver {
    fn on_epoch(&mut self, _epoch: usize, _state: &ModelState, _outcome: &EpochOutcome) -> Result<(), String> {
        Ok(())
    }

    /// Called every `checkpoint_every` epochs and once at exit with the
    /// number of completed epochs.
    fn on_checkpoint(&mut self, _epochs_done: usize, _state: &ModelState, _optimizer: &OptimizerState) -> Result<(), String> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Where [`fit`] starts from.
#[derive(Debug, Clone)]
pub struct Resume {
    pub state: ModelState,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: ModelState,
    pub optimizer: OptimizerState,
}

/// Runs epochs until the largest parameter change drops below
/// `convergence_tol` or `epochs_max` epochs have run.
pub fn fit(
    seq: &ObservedSequence,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainedModel, TrainHistory), TrainError> {
    let state = init(config, seq)?;
    let optimizer = new_optimizer(&state, &config.adam);
    fit_from(
        seq,
        config,
        Resume {
            state,
            optimizer,
            epochs_done: 0,
        },
        observer,
    )
}

pub fn fit_from(
    seq: &ObservedSequence,
    config: &TrainConfig,
    resume: Resume,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainedModel, TrainHistory), TrainError> {
    config.validate()?;
    let Resume {
        mut state,
        mut optimizer,
        epochs_done,
    } = resume;
    if state.steps() != seq.steps() || state.frame() != seq.frame() {
        return Err(ModelError::Dims("model state does not match the sequence".into()).into());
    }
    let mut history = TrainHistory {
        reports: Vec::new(),
        epochs_run: 0,
        converged: false,
        wall_time_secs: None,
    };
    let mut done = epochs_done;
    while done < config.epochs_max {
        let outcome = epoch(seq, &mut state, &mut optimizer, config, done)?;
        done += 1;
        history.reports.push(outcome.report);
        history.epochs_run += 1;
        observer.on_epoch(done, &state, &outcome).map_err(TrainError::Observer)?;
        if outcome.max_change < config.convergence_tol {
            history.converged = true;
            break;
        }
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.epochs_max {
            observer
                .on_checkpoint(done, &state, &optimizer)
                .map_err(TrainError::Observer)?;
        }
    }
    observer
        .on_checkpoint(done, &state, &optimizer)
        .map_err(TrainError::Observer)?;
    Ok((TrainedModel { state, optimizer }, history))
}
