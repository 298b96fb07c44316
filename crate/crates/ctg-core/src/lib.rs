//! Exposure-link prediction on contact property graphs, with the trust
//! artifacts that go with it: rule- and path-based link explanations,
//! graphsheets, alerting and nudge reports.
//!
//! The crate is organized around the `ctg` CLI's pipeline:
//!
//! * [`graph`] — load/synthesize contact graphs, components, truncated
//!   all-pairs shortest paths, link splits, tabular pair features.
//! * [`ndiff`] — dense tensors with reverse-mode autodiff and Adam
//!   (generic over the float type; `f64` aliases below).
//! * [`models`] — the two link predictors (GCN and a position-aware GNN
//!   over anchor nodes) plus featurization and checkpointing.
//! * [`train`] — training loop, ROC AUC, repeated-runs metrics.
//! * [`explain`] — anchor rules over pair features, edge/feature mask
//!   optimization, and path-ranking explanations.
//! * [`report`] — graphsheets, global feature importance, nudge
//!   recommendations and the risk-adjusted alert policy.
//! * [`pipeline`] — file-level artifact writers shared with the CLI.

pub mod error;
pub mod explain;
pub mod graph;
pub mod models;
pub mod ndiff;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod train;

pub use error::{Error, Result};

/// Concrete scalar used by the models and everything downstream.
pub type Scalar = f64;
/// Dense 2-D `f64` tensor.
pub type Tensor = ndiff::Tensor<f64>;
/// Autodiff tape over `f64` tensors.
pub type Tape = ndiff::Tape<f64>;
/// Adam state over `f64` parameters.
pub type AdamState = ndiff::AdamState<f64>;
