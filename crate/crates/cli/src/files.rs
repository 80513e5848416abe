//! JSON documents read and written by the commands.
//!
//! Doubles are written in shortest round-trip form and parsed with
//! correctly rounded conversion, so every value survives a save/load cycle
//! bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use lgcompose_core::data::{GroundTruth, SceneSpec};
use lgcompose_core::optim::OptimizerState;
use lgcompose_core::{CoordinateFrame, FlowParams, Image, ModelState, ObservedSequence, Tensor, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Input(format!("no such {what}: {}", path.display()))
        } else {
            CliError::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid {what} {}: {e}", path.display())))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(config: &TrainConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub height: usize,
    pub width: usize,
    pub patterns: usize,
    pub transformers: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerRecord {
    #[serde(rename = "A")]
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

/// Model parameters plus, for resumable checkpoints, optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: ModelDims,
    /// `[L, H, W]`, row-major.
    pub logits: Vec<f64>,
    pub transformers: Vec<TransformerRecord>,
    /// `[K, L, N]`, row-major.
    pub delta_lambda: Vec<f64>,
    pub config_hash: String,
    pub rng_seed: u64,
    #[serde(default)]
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_state(state: &ModelState, config: &TrainConfig, epoch: usize, optimizer: Option<&OptimizerState>) -> Self {
        let frame = state.frame();
        Self {
            dims: ModelDims {
                height: frame.height,
                width: frame.width,
                patterns: state.patterns(),
                transformers: state.transformers(),
                steps: state.steps(),
            },
            logits: state.logits().data().to_vec(),
            transformers: state
                .thetas()
                .iter()
                .map(|t| TransformerRecord { a: t.a, b: t.b })
                .collect(),
            delta_lambda: state.delta_lambda().data().to_vec(),
            config_hash: config_hash(config),
            rng_seed: config.seed,
            epoch,
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_state(&self) -> Result<ModelState, CliError> {
        let d = self.dims;
        let frame = CoordinateFrame::new(d.height, d.width)?;
        if self.transformers.len() != d.transformers {
            return Err(CliError::Input(format!(
                "checkpoint lists {} transformers but dims say {}",
                self.transformers.len(),
                d.transformers
            )));
        }
        let logits = Tensor::new(vec![d.patterns, d.height, d.width], self.logits.clone())
            .map_err(|e| CliError::Input(format!("checkpoint logits: {e}")))?;
        let deltas = Tensor::new(vec![d.transformers, d.patterns, d.steps], self.delta_lambda.clone())
            .map_err(|e| CliError::Input(format!("checkpoint delta_lambda: {e}")))?;
        let thetas = self.transformers.iter().map(|t| FlowParams::new(t.a, t.b)).collect();
        Ok(ModelState::new(frame, logits, thetas, deltas)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceDims {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dims: SequenceDims,
    /// One row-major array per frame.
    pub frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SceneSpec>,
}

impl Dataset {
    pub fn new(seq: &ObservedSequence, truth: Option<GroundTruth>, spec: Option<SceneSpec>) -> Self {
        let first = seq.first();
        Self {
            dims: SequenceDims {
                height: first.height(),
                width: first.width(),
                frames: seq.frames().len(),
            },
            frames: seq.frames().iter().map(|f| f.data().to_vec()).collect(),
            ground_truth: truth,
            spec,
        }
    }

    pub fn sequence(&self) -> Result<ObservedSequence, CliError> {
        if self.frames.len() != self.dims.frames {
            return Err(CliError::Input(format!(
                "dataset declares {} frames but holds {}",
                self.dims.frames,
                self.frames.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| Image::new(self.dims.height, self.dims.width, f.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ObservedSequence::new(frames)?)
    }
}

/// Fails unless `state` was built for sequences shaped like `seq`.
pub fn check_match(state: &ModelState, seq: &ObservedSequence) -> Result<(), CliError> {
    if state.frame() != seq.frame() || state.steps() != seq.steps() {
        let f = state.frame();
        return Err(CliError::Input(format!(
            "checkpoint is {}x{} with {} steps, dataset is {}x{} with {} steps",
            f.height,
            f.width,
            state.steps(),
            seq.frame().height,
            seq.frame().width,
            seq.steps()
        )));
    }
    Ok(())
}
