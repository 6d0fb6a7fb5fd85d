//! Margin analysis and average-margin regularized training.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats, the CLI and experiment orchestration live in the
//! `amr-harness` crate. Enable the default `std` feature for runtime SIMD
//! dispatch in the matrix kernels.
//!
//! Module map:
//!
//! - [`ndops`]: dense vectors and matrices, seeded randomness, ball sampling,
//!   spectral norms.
//! - [`data`]: labeled datasets, binary filtering, synthetic separable data.
//! - [`models`]: linear and one-hidden-layer ReLU classifiers with exact
//!   gradients.
//! - [`margins`]: exact linear margins, Lipschitz margin estimates, margin
//!   statistics.
//! - [`objectives`]: losses, the truncated average-margin regularizer, the
//!   orthogonal penalty and the Fisher-consistency checker.
//! - [`train`]: SGD with Nesterov momentum, l2 PGD, adversarial training and a
//!   hard-margin SVM reference solver.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(rust_2018_idioms)]

extern crate alloc;

pub mod data;
mod error;
pub mod margins;
pub mod models;
pub mod ndops;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
