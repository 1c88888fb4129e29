//! Compress-then-explain: coreset selection by kernel thinning and
//! removal/gradient-based explanation estimation on the selected rows.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: tabular datasets, CSV ingestion, preprocessing, splits.
//! - [`kernels`]: the Gaussian kernel shared by thinning and MMD.
//! - [`compress`]: i.i.d. sampling, k-medoids, kernel halving, Compress++.
//! - [`metrics`]: distribution discrepancies and explanation errors.
//! - [`models`]: a small differentiable MLP and the model-function traits.
//! - [`explain`]: SHAP, SAGE, expected gradients and partial dependence.
//! - [`bench`]: the repeated-trial evaluation protocol.
//!
//! Data-parallel loops go through [`parallel::Exec`]; with the `parallel`
//! feature disabled every loop runs sequentially and produces identical
//! results.

pub mod bench;
pub mod compress;
pub mod data;
pub mod error;
pub mod explain;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod rng;

pub use error::{CteError, Result};
