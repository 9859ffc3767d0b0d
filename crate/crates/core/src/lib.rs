//! Desk-scale study of label-noise transition matrices: a bi-level trainer
//! that adapts the transition matrix against a small clean meta set, the
//! baseline estimators it is compared with (CE, fine-tuning, Forward
//! anchors, GLC, S-Model), synthetic Gaussian-mixture benchmarks with known
//! ground-truth noise, and a closed-form generalization bound.
//!
//! Core linear algebra is generic over the float scalar; everything above
//! it runs in f64 through the [`Matrix`] alias.

pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
pub mod matrix;
pub mod meta;
pub mod metrics;
pub mod mlp;
pub mod noise;
pub mod objective;
pub mod rng;
pub mod transition;

pub use error::{Error, Result};
pub use rng::SeededRng;

/// The concrete scalar used by all model and training code.
pub type Scalar = f64;

/// The concrete matrix type used by all model and training code.
pub type Matrix = matrix::DenseMatrix<Scalar>;
