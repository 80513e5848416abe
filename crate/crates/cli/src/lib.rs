//! File formats, renderers and subcommands around `lgcompose-core`.

pub mod commands;
pub mod error;
pub mod files;
pub mod render;
pub mod threads;

pub use error::CliError;
