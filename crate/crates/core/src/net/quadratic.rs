//! Quadratic multi-task model: closed-form losses over the shared block.
//!
//! Each task's loss is `(theta - c)' A (theta - c)` with `A` symmetric
//! positive definite and no task-specific parameters. Gradients and
//! Hessians have closed forms, which makes this the oracle model for the
//! transference approximations.

use crate::error::{Error, Result};
use crate::net::params::{BlockLayout, Layout, ParamSet};
use crate::net::{Batch, MultiTaskModel, TaskGradient};

/// One quadratic task: `L(theta) = (theta - center)' matrix (theta - center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    /// Row-major `dim x dim`, symmetric positive definite.
    pub matrix: Vec<f64>,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    dim: usize,
    tasks: Vec<QuadraticTask>,
}

impl QuadraticModel {
    pub fn new(dim: usize, tasks: Vec<QuadraticTask>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("quadratic dimension must be >= 1".into()));
        }
        if tasks.is_empty() {
            return Err(Error::Config("a quadratic suite needs at least one task".into()));
        }
        for (i, task) in tasks.iter().enumerate() {
            if task.matrix.len() != dim * dim || task.center.len() != dim {
                return Err(Error::Shape(format!("quadratic task {i} does not match dim {dim}")));
            }
        }
        Ok(QuadraticModel { dim, tasks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tasks(&self) -> &[QuadraticTask] {
        &self.tasks
    }

    /// `A v` for one task's matrix; `2 A v` is the exact Hessian product.
    pub fn matrix_vector(&self, task: usize, v: &[f64]) -> Vec<f64> {
        let a = &self.tasks[task].matrix;
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| a[r * self.dim + c] * v[c]).sum())
            .collect()
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if params.shared.len() != self.dim {
            return Err(Error::Shape(format!(
                "shared block has {} parameters, quadratic suite expects {}",
                params.shared.len(),
                self.dim
            )));
        }
        if params.tasks.len() != self.tasks.len() {
            return Err(Error::Shape("parameter set task count differs from suite".into()));
        }
        Ok(())
    }
}

impl MultiTaskModel for QuadraticModel {
    fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn layout(&self) -> Layout {
        Layout {
            shared: BlockLayout::flat(self.dim),
            tasks: vec![BlockLayout::flat(0); self.tasks.len()],
        }
    }

    fn forward_losses(&self, params: &ParamSet, _batch: &Batch) -> Result<Vec<f64>> {
        self.check(params)?;
        let mut losses = Vec::with_capacity(self.tasks.len());
        for (i, task) in self.tasks.iter().enumerate() {
            let diff: Vec<f64> = params.shared.iter().zip(&task.center).map(|(t, c)| t - c).collect();
            let av = self.matrix_vector(i, &diff);
            let loss: f64 = diff.iter().zip(&av).map(|(d, a)| d * a).sum();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("quadratic task {i} loss")));
            }
            losses.push(loss);
        }
        Ok(losses)
    }

    fn task_gradients(&self, params: &ParamSet, _batch: &Batch) -> Result<Vec<TaskGradient>> {
        self.check(params)?;
        let mut out = Vec::with_capacity(self.tasks.len());
        for (i, task) in self.tasks.iter().enumerate() {
            let diff: Vec<f64> = params.shared.iter().zip(&task.center).map(|(t, c)| t - c).collect();
            let shared: Vec<f64> = self.matrix_vector(i, &diff).iter().map(|v| 2.0 * v).collect();
            if !shared.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("quadratic task {i} gradient")));
            }
            out.push(TaskGradient { shared, task: vec![] });
        }
        Ok(out)
    }
}

/// The one-dimensional two-task toy used across the test suite:
/// `L1(theta) = theta^2`, `L2(theta) = (theta - 1)^2`.
pub fn toy_two_well() -> QuadraticModel {
    QuadraticModel::new(
        1,
        vec![
            QuadraticTask { matrix: vec![1.0], center: vec![0.0] },
            QuadraticTask { matrix: vec![1.0], center: vec![1.0] },
        ],
    )
    .unwrap()
}

/// A placeholder batch for models that ignore inputs.
pub fn dummy_batch(num_tasks: usize) -> Batch {
    Batch {
        inputs: vec![0.0],
        batch_size: 1,
        input_dim: 1,
        labels: vec![crate::net::TaskLabels::Real { dim: 1, values: vec![0.0] }; num_tasks],
        batch_id: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::hessian_vector_product;

    #[test]
    fn toy_losses_and_gradients() {
        let model = toy_two_well();
        let params = ParamSet {
            shared: vec![0.5],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let losses = model.forward_losses(&params, &batch).unwrap();
        assert_eq!(losses, vec![0.25, 0.25]);
        let grads = model.task_gradients(&params, &batch).unwrap();
        assert_eq!(grads[0].shared, vec![1.0]);
        assert_eq!(grads[1].shared, vec![-1.0]);
    }

    #[test]
    fn hvp_on_quadratic_is_exact() {
        let model = toy_two_well();
        let params = ParamSet {
            shared: vec![0.5],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let hv = hessian_vector_product(&model, &params, &batch, 1, &[1.0], None).unwrap();
        assert!((hv[0] - 2.0).abs() <= 1e-10, "{}", hv[0]);
        let zero = hessian_vector_product(&model, &params, &batch, 1, &[0.0], None).unwrap();
        assert_eq!(zero, vec![0.0]);
    }
}
