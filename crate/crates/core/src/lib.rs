//! Multi-variate parallel attention (MVPA) and a toy-scale MVPFormer pipeline.
//!
//! The crate is organised bottom-up:
//!
//! - [`series`]: multichannel signal containers, CSV IO, resampling, windowing
//!   and a deterministic synthetic generator.
//! - [`wavelet`]: periodized db4 filter bank, RMS normalisation and the
//!   segment encoder.
//! - [`attention`]: the three-component attention (content, relative time,
//!   relative channel), its shift-based efficient evaluation, masks,
//!   structured dropout and a brute-force reference.
//! - [`autodiff`]: a small reverse-mode tape used for training and gradient
//!   checks.
//! - [`model`]: decoder stack, heads, LoRA adapters and checkpoints.
//! - [`objectives`], [`trainer`], [`evaluation`]: losses, optimisation loops
//!   and episodic seizure-style metrics.
//! - [`verify`]: the invariant battery driven by the `verify` CLI command.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod series;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{EmbeddingGrid, Tensor};
