//! The subcommands. Each returns a [`CliError`] whose exit code the binary
//! reports; nothing is written outside the given output directory.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use lgcompose_core::data::{generate_sequence, SceneSpec};
use lgcompose_core::eval::{evaluate, field_samples, EvalReport, DEFAULT_TAU_ID, DEFAULT_TAU_P};
use lgcompose_core::objectives::objective_p;
use lgcompose_core::optim::OptimizerState;
use lgcompose_core::training::{fit_from, init, new_optimizer, EpochOutcome, Resume, TrainHistory, TrainObserver};
use lgcompose_core::verify::{self, PropertyResult, VerifyOptions};
use lgcompose_core::{LossReport, LossWeights, ModelState, ObservedSequence, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::files::{check_match, config_hash, read_json, write_atomic, write_json, Checkpoint, Dataset};
use crate::render::{field_svg, strip_pgm, Shading};
use crate::threads::map_parallel;

pub const FIELD_DENSITY: usize = 15;

#[derive(Debug, Parser)]
#[command(name = "lgcompose", version, about = "Learn pattern primitives and Lie-group transformers from image sequences")]
pub struct Cli {
    /// Overrides the seed of commands that draw random numbers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sequence from a scene description.
    Gen(GenArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Analyse a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Draw a dataset and, optionally, a model's patterns and fields.
    Render(RenderArgs),
    /// Run the numerical property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU_P)]
    pub tau_p: f64,
    #[arg(long, default_value_t = DEFAULT_TAU_ID)]
    pub tau_id: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run only properties whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
    /// Swap in a first-order exponential to check that the suite catches it.
    #[arg(long, hide = true)]
    pub corrupt_exponential: bool,
}

/// Record of one command invocation, kept next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<TrainConfig>,
    pub seed: Option<u64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    fn start(out: &Path, command: &str, config: Option<TrainConfig>, seed: Option<u64>) -> Result<Self, CliError> {
        let m = Self {
            command: command.into(),
            seed: seed.or(config.as_ref().map(|c| c.seed)),
            config,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
        };
        write_json(&out.join(Self::FILE), &m)?;
        Ok(m)
    }

    fn finish(&mut self, out: &Path, status: &str) -> Result<(), CliError> {
        self.finished_unix = Some(now());
        self.status = status.into();
        self.artifacts.sort();
        self.artifacts.dedup();
        write_json(&out.join(Self::FILE), self)
    }
}

/// Writes `bytes` to `out/rel` and records the artifact.
fn emit(out: &Path, rel: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), CliError> {
    write_atomic(&out.join(rel), bytes)?;
    manifest.artifacts.push(rel.into());
    Ok(())
}

fn emit_json<T: Serialize>(out: &Path, rel: &str, value: &T, manifest: &mut RunManifest) -> Result<(), CliError> {
    write_json(&out.join(rel), value)?;
    manifest.artifacts.push(rel.into());
    Ok(())
}

pub fn gen(args: &GenArgs, seed: Option<u64>) -> Result<(), CliError> {
    let spec: SceneSpec = read_json(&args.spec, "spec")?;
    let (seq, truth) = generate_sequence(&spec)?;
    let mut manifest = RunManifest::start(&args.out, "gen", None, seed)?;
    emit_json(&args.out, "dataset.json", &Dataset::new(&seq, Some(truth), Some(spec)), &mut manifest)?;
    emit(&args.out, "preview.pgm", &strip_pgm(seq.frames(), Shading::Linear)?, &mut manifest)?;
    manifest.finish(&args.out, "completed")
}

/// One line of `metrics.json`; `epoch` counts completed epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub max_change: f64,
}

struct RunObserver<'a> {
    out: &'a Path,
    config: &'a TrainConfig,
    metrics: Vec<MetricRow>,
    last_checkpoint: Option<String>,
    /// State after the latest completed epoch, saved if training aborts.
    last_state: Option<ModelState>,
}

impl RunObserver<'_> {
    fn save_metrics(&self) -> Result<(), CliError> {
        write_json(&self.out.join("metrics.json"), &self.metrics)
    }
}

impl TrainObserver for RunObserver<'_> {
    fn on_epoch(&mut self, epoch: usize, state: &ModelState, outcome: &EpochOutcome) -> Result<(), String> {
        self.metrics.push(MetricRow {
            epoch,
            losses: outcome.report,
            max_change: outcome.max_change,
        });
        self.last_state = Some(state.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, epochs_done: usize, state: &ModelState, optimizer: &OptimizerState) -> Result<(), String> {
        let rel = format!("checkpoints/epoch_{epochs_done:06}.json");
        let ckpt = Checkpoint::from_state(state, self.config, epochs_done, Some(optimizer));
        write_json(&self.out.join(&rel), &ckpt).map_err(|e| e.to_string())?;
        self.save_metrics().map_err(|e| e.to_string())?;
        self.last_checkpoint = Some(rel);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: TrainHistory,
    pub final_state: ModelState,
    pub final_path: PathBuf,
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<TrainSummary, CliError> {
    let dataset: Dataset = read_json(&args.data, "dataset")?;
    let seq = dataset.sequence()?;
    let mut config: TrainConfig = read_json(&args.config, "config")?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    train_sequence(&seq, &config, &args.out, args.resume.as_deref())
}

/// Training on an in-memory sequence; writes the same run directory as
/// [`train`].
pub fn train_sequence(seq: &ObservedSequence, config: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    let start = match resume {
        Some(path) => {
            let ckpt: Checkpoint = read_json(path, "checkpoint")?;
            if ckpt.config_hash != config_hash(config) {
                return Err(CliError::Input(format!(
                    "checkpoint {} was written under a different config",
                    path.display()
                )));
            }
            let state = ckpt.to_state()?;
            check_match(&state, seq)?;
            let optimizer = ckpt.optimizer.clone().ok_or_else(|| {
                CliError::Input(format!("checkpoint {} has no optimizer state to resume from", path.display()))
            })?;
            Resume {
                state,
                optimizer,
                epochs_done: ckpt.epoch,
            }
        }
        None => {
            let state = init(config, seq)?;
            let optimizer = new_optimizer(&state, &config.adam);
            Resume {
                state,
                optimizer,
                epochs_done: 0,
            }
        }
    };

    let mut manifest = RunManifest::start(out, "train", Some(config.clone()), Some(config.seed))?;
    emit_json(out, "config.json", config, &mut manifest)?;
    let mut observer = RunObserver {
        out,
        config,
        metrics: Vec::new(),
        last_checkpoint: None,
        last_state: Some(start.state.clone()),
    };
    let first_epoch = start.epochs_done;
    let clock = Instant::now();
    let result = fit_from(seq, config, start, &mut observer);
    observer.save_metrics()?;
    manifest.artifacts.push("metrics.json".into());
    if let Some(c) = &observer.last_checkpoint {
        manifest.artifacts.push(c.clone());
    }
    let written: Vec<String> = list_checkpoints(out);
    manifest.artifacts.extend(written);

    match result {
        Ok((model, mut history)) => {
            history.wall_time_secs = Some(clock.elapsed().as_secs_f64());
            let epochs = observer.metrics.last().map(|m| m.epoch).unwrap_or(0);
            let fin = Checkpoint::from_state(&model.state, config, epochs, None);
            emit_json(out, "final.json", &fin, &mut manifest)?;
            manifest.finish(out, "completed")?;
            Ok(TrainSummary {
                history,
                final_state: model.state,
                final_path: out.join("final.json"),
            })
        }
        Err(e) => {
            if let Some(state) = &observer.last_state {
                let epochs = observer.metrics.last().map(|m| m.epoch).unwrap_or(first_epoch);
                let rel = format!("checkpoints/aborted_epoch_{epochs:06}.json");
                emit_json(out, &rel, &Checkpoint::from_state(state, config, epochs, None), &mut manifest)?;
            }
            manifest.finish(out, "aborted")?;
            Err(match e {
                TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
                TrainError::Observer(msg) => CliError::Input(msg),
                TrainError::Model(m) => CliError::Input(m.to_string()),
            })
        }
    }
}

fn list_checkpoints(out: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(out.join("checkpoints"))
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|n| n.ends_with(".json"))
                .map(|n| format!("checkpoints/{n}"))
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

fn render_model(out: &Path, state: &ModelState, seq: &ObservedSequence, manifest: &mut RunManifest) -> Result<(), CliError> {
    let primitives = state.primitives(seq.first())?;
    emit(out, "patterns.pgm", &strip_pgm(&primitives, Shading::Linear)?, manifest)?;
    emit(out, "patterns_threshold.pgm", &strip_pgm(&primitives, Shading::Threshold)?, manifest)?;
    let recon = state.reconstruct(seq.first())?;
    emit(out, "reconstruction.pgm", &strip_pgm(&recon, Shading::Linear)?, manifest)?;
    emit(out, "reconstruction_threshold.pgm", &strip_pgm(&recon, Shading::Threshold)?, manifest)?;
    for (k, theta) in state.thetas().iter().enumerate() {
        let samples = field_samples(theta, FIELD_DENSITY)?;
        let name = format!("fields/transformer_{}", k + 1);
        emit_json(out, &format!("{name}.json"), &samples, manifest)?;
        let svg = field_svg(&samples, FIELD_DENSITY, &format!("T{}", k + 1));
        emit(out, &format!("{name}.svg"), svg.as_bytes(), manifest)?;
    }
    Ok(())
}

fn render_observed(out: &Path, seq: &ObservedSequence, manifest: &mut RunManifest) -> Result<(), CliError> {
    emit(out, "observed.pgm", &strip_pgm(seq.frames(), Shading::Linear)?, manifest)?;
    emit(out, "observed_threshold.pgm", &strip_pgm(seq.frames(), Shading::Threshold)?, manifest)
}

pub fn eval(args: &EvalArgs, seed: Option<u64>) -> Result<EvalReport, CliError> {
    let ckpt: Checkpoint = read_json(&args.ckpt, "checkpoint")?;
    let dataset: Dataset = read_json(&args.data, "dataset")?;
    let seq = dataset.sequence()?;
    let state = ckpt.to_state()?;
    check_match(&state, &seq)?;
    if !(args.tau_p > 0.0 && args.tau_p < 1.0) {
        return Err(CliError::Input(format!("--tau-p must lie in (0, 1), got {}", args.tau_p)));
    }
    if !(args.tau_id > 0.0) {
        return Err(CliError::Input(format!("--tau-id must be positive, got {}", args.tau_id)));
    }
    let losses = objective_p(&seq, &state, &LossWeights::default()).ok().map(|(_, r)| r);
    let report = evaluate(&state, &seq, dataset.ground_truth.as_ref(), losses, args.tau_p, args.tau_id)?;

    let mut manifest = RunManifest::start(&args.out, "eval", None, seed.or(Some(ckpt.rng_seed)))?;
    emit_json(&args.out, "report.json", &report, &mut manifest)?;
    render_observed(&args.out, &seq, &mut manifest)?;
    render_model(&args.out, &state, &seq, &mut manifest)?;
    manifest.finish(&args.out, "completed")?;
    Ok(report)
}

pub fn render(args: &RenderArgs, seed: Option<u64>) -> Result<(), CliError> {
    let dataset: Dataset = read_json(&args.data, "dataset")?;
    let seq = dataset.sequence()?;
    let state = match &args.ckpt {
        Some(p) => {
            let s = read_json::<Checkpoint>(p, "checkpoint")?.to_state()?;
            check_match(&s, &seq)?;
            Some(s)
        }
        None => None,
    };
    let mut manifest = RunManifest::start(&args.out, "render", None, seed)?;
    render_observed(&args.out, &seq, &mut manifest)?;
    if let Some(state) = state {
        render_model(&args.out, &state, &seq, &mut manifest)?;
    }
    manifest.finish(&args.out, "completed")
}

/// Runs the selected properties in parallel; results keep the suite's order.
pub fn verify_properties(filter: Option<&str>, opts: &VerifyOptions) -> Vec<PropertyResult> {
    let names: Vec<&'static str> = verify::PROPERTY_NAMES
        .iter()
        .copied()
        .filter(|n| filter.map(|f| n.contains(f)).unwrap_or(true))
        .collect();
    map_parallel(&names, |n| verify::run(Some(n), opts).into_iter().find(|r| r.name == *n))
        .into_iter()
        .flatten()
        .collect()
}

pub fn verify(args: &VerifyArgs, seed: Option<u64>) -> Result<Vec<PropertyResult>, CliError> {
    let mut opts = VerifyOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    if args.corrupt_exponential {
        opts.exponential = verify::truncated_exponential;
    }
    let results = verify_properties(args.filter.as_deref(), &opts);
    if results.is_empty() {
        return Err(CliError::Input(format!(
            "no property matches {:?}; known: {}",
            args.filter.as_deref().unwrap_or(""),
            verify::PROPERTY_NAMES.join(", ")
        )));
    }
    Ok(results)
}

pub fn format_result(r: &PropertyResult) -> String {
    format!(
        "{} {:<22} max_error={:.3e} tol={:.1e}  {}",
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.max_error,
        r.tolerance,
        r.detail
    )
}
