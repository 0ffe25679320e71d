//! Coverage criteria for neural-network test suites, computed over recorded
//! per-layer activation traces.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: streaming covariance, matrix norms and symmetric spectra.
//! - [`trace`]: the activation-trace data model, suite views and the on-disk
//!   trace directory format.
//! - [`criteria`]: NLC (batch and only-increase incremental), the
//!   determinant/trace/spectral covariance scores and the discrete baselines
//!   (NC, KMNC, NBC, SNAC, TKNC) behind one [`criteria::Criterion`] trait.
//! - [`axioms`]: metamorphic checks for monotonicity, order independence and
//!   duplicate insensitivity, plus the repeated-shuffle stability study.
//! - [`experiments`]: layer contribution reports, noise suites, activation
//!   spectra, JS divergence and clustering-based subset selection.
//! - [`toynet`]: a small deterministic feed-forward network and synthetic
//!   datasets used to produce traces offline.
//! - [`fixtures`]: tiny traces with hand-checkable answers.

// `!(a <= b)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod axioms;
pub mod criteria;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod kmeans;
pub mod linalg;
pub mod rng;
pub mod toynet;
pub mod trace;

pub use error::{Error, Result};
