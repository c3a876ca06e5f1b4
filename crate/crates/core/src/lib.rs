//! Multi-task transference toolkit.
//!
//! Measures how one task's gradient step on shared parameters changes other
//! tasks' losses (transference), selects per-step gradient candidates by
//! total transference, recommends task groupings under an inference budget,
//! and probes the loss landscape around training states. Everything runs on
//! a self-contained dense-network engine with synthetic datasets, seeded
//! end to end for bit-reproducible runs.

pub mod config;
pub mod datasets;
pub mod error;
pub mod grouping;
pub mod io_util;
pub mod it_mtl;
pub mod landscape;
pub(crate) mod linalg;
pub mod mechanisms;
pub mod net;
pub mod report;
pub mod run;
pub mod seed;
pub mod transference;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use grouping::GroupingPlan;
pub use mechanisms::GradientCandidate;
pub use net::{
    Activation, Batch, BatchProvider, DenseNet, LayerSpec, Layout, LossKind, ModelSpec,
    MultiTaskModel, OptimizerInit, OptimizerKind, OptimizerState, ParamSet, QuadraticModel,
    QuadraticTask, TaskGradient, TaskLabels, TaskSpec, UpdateTarget,
};
pub use transference::{NormalizedMatrix, SquareMatrix, TransferenceMatrix, TransferenceRecord};
