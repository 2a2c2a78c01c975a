//! Pattern-based sparsity toolkit for 3x3 convolutional networks.
//!
//! The pipeline, end to end:
//!
//! 1. [`pattern`] — binary 4-of-9 kernel masks, the candidate library of all
//!    126 masks, and the two steerable-filter mask families (Gaussian and
//!    enhanced-LoG) whose union is the derived 8-pattern library.
//! 2. [`nn`] — a minimal dense CNN substrate (conv2d with analytic gradients,
//!    ReLU/pooling, a linear classifier, SGD) sized for desk-scale runs.
//! 3. [`admm`] — pattern selection by ADMM: SGD on weights and per-kernel
//!    selection logits, Euclidean projection onto the probability simplex,
//!    dual ascent, library shrinking, plus connectivity pruning by kernel
//!    L2 score.
//! 4. [`pack`] — filter/kernel re-ordering and the compact `.psp` on-disk
//!    layout holding only the four surviving weights of each kept kernel.
//! 5. [`engine`] — execution of packed models with one specialized,
//!    branch-free inner loop per pattern, a dense reference path, and a
//!    timing harness.

pub mod admm;
pub mod engine;
mod error;
pub mod nn;
pub mod pack;
pub mod pattern;
pub(crate) mod wire;

pub use error::{Error, Result};
