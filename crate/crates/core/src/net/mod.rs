//! Deterministic dense-network engine with hard parameter sharing.
//!
//! The engine separates model structure from parameter values: a model is a
//! pure family of per-task loss functions `L_i(batch, shared, task_i)` and a
//! [`ParamSet`] holds the values. That split lets the measurement modules
//! evaluate losses at hypothetical parameter values (lookaheads, landscape
//! probes) without touching training state.

pub mod model;
pub mod optimizer;
pub mod params;
pub mod quadratic;

pub use model::{Activation, DenseNet, LayerSpec, LossKind, ModelSpec, TaskSpec};
pub use optimizer::{OptimizerInit, OptimizerKind, OptimizerState, UpdateTarget};
pub use params::{flatten, unflatten, BlockLayout, LayerParams, LayerShape, Layout, ParamSet};
pub use quadratic::{QuadraticModel, QuadraticTask};

use crate::error::{Error, Result};
use crate::linalg;

/// Per-task labels for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabels {
    /// Class index per example.
    Class(Vec<u16>),
    /// `dim` real targets per example, row-major `batch_size x dim`.
    Real { dim: usize, values: Vec<f64> },
}

impl TaskLabels {
    pub fn len(&self) -> usize {
        match self {
            TaskLabels::Class(v) => v.len(),
            TaskLabels::Real { dim, values } => {
                if *dim == 0 {
                    0
                } else {
                    values.len() / dim
                }
            }
        }
    }
}

/// A fixed minibatch: inputs plus one label set per task. Held constant
/// across all lookahead evaluations within a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Row-major `batch_size x input_dim`.
    pub inputs: Vec<f64>,
    pub batch_size: usize,
    pub input_dim: usize,
    pub labels: Vec<TaskLabels>,
    pub batch_id: u64,
}

impl Batch {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Shape("batch_size must be >= 1".into()));
        }
        if self.inputs.len() != self.batch_size * self.input_dim {
            return Err(Error::Shape(format!(
                "inputs has {} values, expected {} x {}",
                self.inputs.len(),
                self.batch_size,
                self.input_dim
            )));
        }
        for (i, labels) in self.labels.iter().enumerate() {
            if labels.len() != self.batch_size {
                return Err(Error::Shape(format!(
                    "task {i} labels cover {} examples, batch has {}",
                    labels.len(),
                    self.batch_size
                )));
            }
        }
        Ok(())
    }
}

/// Gradients of one task's loss with respect to the shared block and the
/// task's own block. Gradients with respect to other tasks' parameters are
/// identically zero by architecture and never materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradient {
    pub shared: Vec<f64>,
    pub task: Vec<f64>,
}

/// A multi-task model: `m` non-negative loss functions over a shared
/// parameter block plus per-task blocks.
pub trait MultiTaskModel {
    fn num_tasks(&self) -> usize;

    /// Layout of the parameter set this model evaluates.
    fn layout(&self) -> Layout;

    /// Per-task losses at the given parameters; deterministic for fixed
    /// `(params, batch)` and non-negative on success.
    fn forward_losses(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>>;

    /// Per-task gradients with respect to the shared block and the task's
    /// own block.
    fn task_gradients(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<TaskGradient>>;
}

/// Hessian-vector product `H_task · v` for the shared-parameter Hessian of
/// one task's loss, by central finite differences of the analytic gradient:
///
/// `(grad L(shared + eps*v_hat) - grad L(shared - eps*v_hat)) * |v| / (2 eps)`
///
/// with `v_hat = v / |v|`. Returns the zero vector when `|v| = 0`. The
/// default step is `1e-4 * (1 + |shared|)`.
pub fn hessian_vector_product(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    task: usize,
    v: &[f64],
    eps: Option<f64>,
) -> Result<Vec<f64>> {
    if task >= model.num_tasks() {
        return Err(Error::Shape(format!("task index {task} out of range")));
    }
    let mut all = hessian_vector_products(model, params, batch, v, eps)?;
    Ok(all.swap_remove(task))
}

/// `H_j · v` for every task `j` at once. The perturbed gradient evaluations
/// cover all tasks, so probing one direction costs two gradient passes no
/// matter how many tasks consume it.
pub fn hessian_vector_products(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    v: &[f64],
    eps: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    if v.len() != params.shared.len() {
        return Err(Error::Shape(format!(
            "direction has {} entries, shared block has {}",
            v.len(),
            params.shared.len()
        )));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("hvp direction".into()));
    }
    let v_norm = linalg::norm(v);
    if v_norm == 0.0 {
        return Ok(vec![vec![0.0; v.len()]; model.num_tasks()]);
    }
    let eps = eps.unwrap_or_else(|| 1e-4 * (1.0 + linalg::norm(&params.shared)));
    let v_hat = linalg::scaled(1.0 / v_norm, v);

    let mut plus = params.clone();
    linalg::axpy(eps, &v_hat, &mut plus.shared);
    let mut minus = params.clone();
    linalg::axpy(-eps, &v_hat, &mut minus.shared);

    let g_plus = model.task_gradients(&plus, batch)?;
    let g_minus = model.task_gradients(&minus, batch)?;

    let scale = v_norm / (2.0 * eps);
    let mut out = Vec::with_capacity(model.num_tasks());
    for (task, (gp, gm)) in g_plus.iter().zip(&g_minus).enumerate() {
        let hv: Vec<f64> = gp
            .shared
            .iter()
            .zip(&gm.shared)
            .map(|(p, m)| (p - m) * scale)
            .collect();
        if !hv.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("hessian-vector product for task {task}")));
        }
        out.push(hv);
    }
    Ok(out)
}

/// Source of training batches, one epoch at a time. Implementations must be
/// deterministic: the same epoch index always yields the same batches.
pub trait BatchProvider {
    fn num_tasks(&self) -> usize;
    fn batches(&self, epoch: usize) -> Vec<Batch>;
}
