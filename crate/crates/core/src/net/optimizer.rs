//! SGD and SGD-with-momentum, with pure update simulation.
//!
//! Lookahead measurements need the exact parameter vector a real update
//! would produce without committing it. `simulate_shared_update` and
//! `apply_update` therefore share one arithmetic kernel, so the simulated
//! and applied results agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::params::{Layout, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
}

/// Serializable optimizer settings; pairs with a [`Layout`] to build the
/// runtime [`OptimizerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInit {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum coefficient in [0, 1); ignored for plain SGD.
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateTarget {
    Shared,
    Task(usize),
}

/// Optimizer state: settings plus velocity buffers matching the parameter
/// layout. Velocity update rule: `v <- mu * v + g`, `theta <- theta - lr * v`
/// (plain SGD is the `mu = 0` case with no velocity read).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    velocity_shared: Vec<f64>,
    velocity_tasks: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(init: &OptimizerInit, layout: &Layout) -> Result<Self> {
        if !(init.learning_rate.is_finite() && init.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be finite and > 0".into()));
        }
        let momentum = match init.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::Momentum => {
                if !(init.momentum.is_finite() && (0.0..1.0).contains(&init.momentum)) {
                    return Err(Error::Config("momentum must lie in [0, 1)".into()));
                }
                init.momentum
            }
        };
        Ok(OptimizerState {
            kind: init.kind,
            learning_rate: init.learning_rate,
            momentum,
            velocity_shared: vec![0.0; layout.shared.len()],
            velocity_tasks: layout.tasks.iter().map(|b| vec![0.0; b.len()]).collect(),
        })
    }

    pub fn velocity_shared(&self) -> &[f64] {
        &self.velocity_shared
    }

    /// The shared parameters one real optimizer step with gradient `g`
    /// would produce. Pure: mutates neither velocity nor parameters.
    pub fn simulate_shared_update(&self, shared: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        self.check_grad(shared.len(), g)?;
        let mut theta = shared.to_vec();
        let mut velocity = self.velocity_shared.clone();
        step_kernel(&mut theta, &mut velocity, g, self.learning_rate, self.effective_momentum());
        Ok(theta)
    }

    /// Applies one optimizer step in place, mutating the target parameter
    /// block and its velocity buffer.
    pub fn apply_update(&mut self, params: &mut ParamSet, target: UpdateTarget, g: &[f64]) -> Result<()> {
        let mu = self.effective_momentum();
        match target {
            UpdateTarget::Shared => {
                self.check_grad(params.shared.len(), g)?;
                step_kernel(&mut params.shared, &mut self.velocity_shared, g, self.learning_rate, mu);
            }
            UpdateTarget::Task(i) => {
                let block = params
                    .tasks
                    .get_mut(i)
                    .ok_or_else(|| Error::Shape(format!("task index {i} out of range")))?;
                let velocity = &mut self.velocity_tasks[i];
                if g.len() != block.len() {
                    return Err(Error::Shape(format!(
                        "gradient has {} entries, task {i} block has {}",
                        g.len(),
                        block.len()
                    )));
                }
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("task {i} update gradient")));
                }
                step_kernel(block, velocity, g, self.learning_rate, mu);
            }
        }
        Ok(())
    }

    fn effective_momentum(&self) -> f64 {
        match self.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::Momentum => self.momentum,
        }
    }

    fn check_grad(&self, expect: usize, g: &[f64]) -> Result<()> {
        if g.len() != expect {
            return Err(Error::Shape(format!(
                "gradient has {} entries, parameter block has {expect}",
                g.len()
            )));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("update gradient".into()));
        }
        Ok(())
    }
}

/// One optimizer step. `mu = 0` reduces to plain SGD; the velocity write is
/// harmless there and keeps one shared code path.
fn step_kernel(theta: &mut [f64], velocity: &mut [f64], g: &[f64], lr: f64, mu: f64) {
    for ((t, v), &gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(g) {
        *v = mu * *v + gi;
        *t -= lr * *v;
    }
}
