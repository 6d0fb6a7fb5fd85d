//! File formats, experiment orchestration and the command-line interface
//! around `amr-core`.
//!
//! - [`idx`]: MNIST IDX reader and writer.
//! - [`checkpoint`]: versioned little-endian parameter files.
//! - [`config`]: flat `key = value` experiment configuration.
//! - [`experiments`]: the runs behind each experiment kind.
//! - [`output`] and [`gallery`]: CSV, JSON and PGM artifacts.
//! - [`cli`]: the `amr` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod gallery;
pub mod idx;
pub mod output;

pub use error::{HarnessError, Result};
