//! Semi-supervised anomaly detection with loss supervision on labeled
//! anomalies only.
//!
//! The usual semi-supervised objective pairs a pull-to-origin loss on the
//! abundant unlabeled (mostly normal) data with a push-away loss on the few
//! labeled anomalies; the sheer volume of normal rows then dominates
//! training. This crate implements the alternative of dropping the normal
//! loss entirely and letting batch normalization supervise the normal data
//! implicitly: batch statistics, dominated by normal rows, enter every
//! backward pass and perform online cluster learning on the enhancer.
//!
//! The crate ships the full ablation surface around that idea — the
//! reweighted objective family, an explicit cluster-loss replacement for
//! batch norm, layer-norm and no-norm controls, synthetic dataset
//! generators, ranking metrics, and a seeded sweep harness with a CLI.

pub mod batcher;
pub mod batchnorm;
pub mod data;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layernorm;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
