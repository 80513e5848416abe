//! Learning pattern primitives and one-parameter Lie-group transformers that
//! reconstruct a grayscale image sequence by superposition.
//!
//! The crate is `no_std` with `alloc`. File formats, rendering and the
//! command-line runner live in the companion `lgcompose` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod expm;
pub mod image;
pub mod lie;
pub mod objectives;
pub mod optim;
pub mod sampling;
pub mod scene;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{AdError, DataError, ModelError, TrainError};
pub use image::Image;
pub use lie::{AffineMap, CoordinateFrame, FlowParams};
pub use tensor::Tensor;
pub use objectives::{LossReport, LossWeights};
pub use scene::{ModelState, ObservedSequence};
pub use training::TrainConfig;
