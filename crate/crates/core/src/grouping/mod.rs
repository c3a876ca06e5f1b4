//! Budgeted task-grouping recommendation from normalized transference.
//!
//! A "split" budget of `k` allows at most `k` groups (shared encoders).
//! Groups may overlap: a task can train in several groups but is served
//! from exactly one. A task's cost inside a group is the mean normalized
//! transference flowing into it from the other members, a singleton costs
//! zero, and a plan's objective is the sum of served costs, minimized.
//! Self-training is the neutral baseline: grouping only wins when inbound
//! transference beats self-transference (negative normalized cost).

pub mod solve;

pub use solve::{
    solve_branch_and_bound, solve_branch_and_bound_with_stats, solve_exhaustive,
    solve_exhaustive_with_stats, SolveStats,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transference::NormalizedMatrix;

/// A set of task groups with a serving assignment. `serving[task]` indexes
/// into `groups`; every task appears in its serving group. Groups that
/// would serve no task are dropped from the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingPlan {
    /// Sorted member lists.
    pub groups: Vec<Vec<usize>>,
    /// task -> index into `groups`.
    pub serving: Vec<usize>,
    /// Sum over tasks of the served cost.
    pub objective: f64,
    /// Maximum number of groups the search was allowed.
    pub budget: usize,
}

impl GroupingPlan {
    /// Served cost per task under this plan.
    pub fn served_costs(&self, normalized: &NormalizedMatrix) -> Result<Vec<f64>> {
        self.serving
            .iter()
            .enumerate()
            .map(|(task, &g)| {
                let costs = group_cost(&self.groups[g], normalized)?;
                costs
                    .get(&task)
                    .copied()
                    .ok_or_else(|| Error::Shape(format!("task {task} missing from its serving group")))
            })
            .collect()
    }
}

/// Cost of each member task within a group: the mean of `t_hat(b, a)` over
/// the other members `b`. A singleton group costs zero (empty mean), the
/// same convention as `t_hat(a, a) = 0`.
pub fn group_cost(group: &[usize], normalized: &NormalizedMatrix) -> Result<BTreeMap<usize, f64>> {
    if group.is_empty() {
        return Err(Error::Config("group is empty".into()));
    }
    let m = normalized.size();
    for &task in group {
        if task >= m {
            return Err(Error::Shape(format!("task {task} outside matrix of size {m}")));
        }
        if !normalized.valid[task] {
            return Err(Error::InvalidColumn { task });
        }
    }
    let mut costs = BTreeMap::new();
    for &a in group {
        let others: Vec<usize> = group.iter().copied().filter(|&b| b != a).collect();
        let cost = if others.is_empty() {
            0.0
        } else {
            others.iter().map(|&b| normalized.scores.get(b, a)).sum::<f64>() / others.len() as f64
        };
        costs.insert(a, cost);
    }
    Ok(costs)
}
