//! Grouping solvers: exhaustive cover enumeration and branch-and-bound.
//!
//! Both minimize the same objective — the sum over tasks of the served cost
//! under the best serving assignment inside the chosen collection — and are
//! guaranteed to return equal objectives. Plans may differ only within
//! equal-objective ties.

use crate::error::{Error, Result};
use crate::grouping::{group_cost, GroupingPlan};
use crate::transference::NormalizedMatrix;

/// Candidate-group guard: exhaustive enumeration works over all `2^m - 1`
/// nonempty subsets.
const MAX_TASKS: usize = 12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    /// Search-tree nodes visited.
    pub nodes: u64,
    /// Subtrees cut by the lower bound (branch-and-bound only).
    pub pruned: u64,
}

struct GroupTable {
    m: usize,
    /// Group bitmasks in search order.
    masks: Vec<u32>,
    /// Per group: (member, cost) pairs, member-sorted.
    costs: Vec<Vec<(usize, f64)>>,
    /// Union of `masks[idx..]`, for coverage feasibility.
    suffix_union: Vec<u32>,
    /// `suffix_best[idx][task]`: best cost of `task` over groups `idx..`.
    suffix_best: Vec<Vec<f64>>,
}

impl GroupTable {
    fn build(normalized: &NormalizedMatrix, order: SearchOrder) -> Result<Self> {
        let m = normalized.size();
        if m == 0 {
            return Err(Error::Config("matrix has no tasks".into()));
        }
        if m > MAX_TASKS {
            return Err(Error::Config(format!("grouping supports at most {MAX_TASKS} tasks, got {m}")));
        }
        if let Some(task) = normalized.valid.iter().position(|&v| !v) {
            return Err(Error::InvalidColumn { task });
        }
        let mut masks: Vec<u32> = (1..(1u32 << m)).collect();
        let mut costs = Vec::with_capacity(masks.len());
        let cost_of = |mask: u32| -> Result<Vec<(usize, f64)>> {
            let members: Vec<usize> = (0..m).filter(|&t| mask & (1 << t) != 0).collect();
            let map = group_cost(&members, normalized)?;
            Ok(map.into_iter().collect())
        };
        match order {
            SearchOrder::SizeThenMask => {
                masks.sort_by_key(|&mask| (mask.count_ones(), mask));
            }
            SearchOrder::PromisingFirst => {
                // Cheapest total-cost groups first so good incumbents appear
                // early; deterministic tie-break on the mask.
                let mut keyed: Vec<(f64, u32)> = masks
                    .iter()
                    .map(|&mask| {
                        let total: f64 = cost_of(mask)
                            .map(|c| c.iter().map(|(_, v)| v).sum())
                            .unwrap_or(f64::INFINITY);
                        (total, mask)
                    })
                    .collect();
                keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                masks = keyed.into_iter().map(|(_, mask)| mask).collect();
            }
        }
        for &mask in &masks {
            costs.push(cost_of(mask)?);
        }

        let n = masks.len();
        let mut suffix_union = vec![0u32; n + 1];
        let mut suffix_best = vec![vec![f64::INFINITY; m]; n + 1];
        for idx in (0..n).rev() {
            suffix_union[idx] = suffix_union[idx + 1] | masks[idx];
            let mut best = suffix_best[idx + 1].clone();
            for &(task, cost) in &costs[idx] {
                if cost < best[task] {
                    best[task] = cost;
                }
            }
            suffix_best[idx] = best;
        }
        Ok(GroupTable { m, masks, costs, suffix_union, suffix_best })
    }

    fn full_mask(&self) -> u32 {
        (1u32 << self.m) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SearchOrder {
    SizeThenMask,
    PromisingFirst,
}

struct Search<'a> {
    table: &'a GroupTable,
    budget: usize,
    use_bound: bool,
    stats: SolveStats,
    best_objective: f64,
    best_masks: Vec<u32>,
    chosen: Vec<u32>,
    /// Current served cost per task (min over chosen groups), INFINITY if
    /// uncovered.
    current: Vec<f64>,
}

impl<'a> Search<'a> {
    fn run(table: &'a GroupTable, budget: usize, use_bound: bool) -> (f64, Vec<u32>, SolveStats) {
        let mut search = Search {
            table,
            budget,
            use_bound,
            stats: SolveStats::default(),
            best_objective: f64::INFINITY,
            best_masks: Vec::new(),
            chosen: Vec::new(),
            current: vec![f64::INFINITY; table.m],
        };
        search.descend(0, 0);
        (search.best_objective, search.best_masks, search.stats)
    }

    fn covered_mask(&self) -> u32 {
        self.chosen.iter().fold(0, |acc, &mask| acc | mask)
    }

    fn descend(&mut self, idx: usize, covered: u32) {
        self.stats.nodes += 1;
        if covered == self.table.full_mask() {
            let objective: f64 = self.current.iter().sum();
            if objective < self.best_objective {
                self.best_objective = objective;
                self.best_masks = self.chosen.clone();
            }
        }
        if idx == self.table.masks.len() || self.chosen.len() == self.budget {
            return;
        }
        // Coverage feasibility: the remaining groups must be able to cover
        // whatever is still uncovered.
        let uncovered = self.table.full_mask() & !covered;
        if uncovered & !self.table.suffix_union[idx] != 0 {
            return;
        }
        if self.use_bound {
            // Admissible bound: each task finishes at least as well as the
            // best cost available among chosen and remaining groups.
            let bound: f64 = (0..self.table.m)
                .map(|t| self.current[t].min(self.table.suffix_best[idx][t]))
                .sum();
            if bound >= self.best_objective {
                self.stats.pruned += 1;
                return;
            }
        }

        // Include groups[idx].
        let mask = self.table.masks[idx];
        let mut undo = Vec::new();
        for &(task, cost) in &self.table.costs[idx] {
            if cost < self.current[task] {
                undo.push((task, self.current[task]));
                self.current[task] = cost;
            }
        }
        self.chosen.push(mask);
        self.descend(idx + 1, covered | mask);
        self.chosen.pop();
        for (task, old) in undo.into_iter().rev() {
            self.current[task] = old;
        }
        debug_assert_eq!(self.covered_mask(), covered);

        // Exclude groups[idx].
        self.descend(idx + 1, covered);
    }
}

fn plan_from_masks(
    normalized: &NormalizedMatrix,
    masks: &[u32],
    objective: f64,
    budget: usize,
) -> Result<GroupingPlan> {
    let m = normalized.size();
    let mut groups: Vec<Vec<usize>> = masks
        .iter()
        .map(|&mask| (0..m).filter(|&t| mask & (1 << t) != 0).collect())
        .collect();
    groups.sort();
    let costs: Vec<Vec<(usize, f64)>> = groups
        .iter()
        .map(|g| group_cost(g, normalized).map(|map| map.into_iter().collect()))
        .collect::<Result<_>>()?;

    // Serve each task from its cheapest containing group; ties go to the
    // smaller group, then to the lexicographically smaller member list.
    let mut serving = vec![usize::MAX; m];
    for task in 0..m {
        let mut best: Option<(f64, usize)> = None;
        for (g, group) in groups.iter().enumerate() {
            let Some(&(_, cost)) = costs[g].iter().find(|&&(t, _)| t == task) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bc, bg)) => {
                    cost < bc
                        || (cost == bc
                            && (group.len() < groups[bg].len()
                                || (group.len() == groups[bg].len() && *group < groups[bg])))
                }
            };
            if better {
                best = Some((cost, g));
            }
        }
        serving[task] =
            best.ok_or_else(|| Error::Infeasible(format!("task {task} not covered")))?.1;
    }

    // Drop groups that serve nobody and remap.
    let mut keep: Vec<usize> = serving.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let remap: Vec<Option<usize>> = (0..groups.len())
        .map(|g| keep.iter().position(|&k| k == g))
        .collect();
    let kept_groups: Vec<Vec<usize>> = keep.iter().map(|&g| groups[g].clone()).collect();
    let serving = serving.into_iter().map(|g| remap[g].unwrap()).collect();

    Ok(GroupingPlan { groups: kept_groups, serving, objective, budget })
}

/// All-singletons plan; optimal whenever the budget covers every task and
/// no group offers a negative cost.
fn singleton_plan(normalized: &NormalizedMatrix, budget: usize) -> Result<GroupingPlan> {
    let m = normalized.size();
    Ok(GroupingPlan {
        groups: (0..m).map(|t| vec![t]).collect(),
        serving: (0..m).collect(),
        objective: 0.0,
        budget,
    })
}

fn any_negative_cost(table: &GroupTable) -> bool {
    table.costs.iter().flatten().any(|&(_, cost)| cost < 0.0)
}

fn solve(
    normalized: &NormalizedMatrix,
    budget: usize,
    order: SearchOrder,
    use_bound: bool,
) -> Result<(GroupingPlan, SolveStats)> {
    if budget < 1 {
        return Err(Error::Infeasible("budget must be at least 1".into()));
    }
    let table = GroupTable::build(normalized, order)?;
    // With no negative costs the all-singletons cover is already optimal
    // once the budget admits it; skip the search.
    if budget >= table.m && !any_negative_cost(&table) {
        return Ok((singleton_plan(normalized, budget)?, SolveStats::default()));
    }
    let (objective, masks, stats) = Search::run(&table, budget, use_bound);
    if masks.is_empty() && objective.is_infinite() {
        return Err(Error::Infeasible(format!(
            "no collection of <= {budget} groups covers all {} tasks",
            table.m
        )));
    }
    Ok((plan_from_masks(normalized, &masks, objective, budget)?, stats))
}

/// Minimizes the summed served cost over every collection of at most
/// `budget` groups that covers all tasks, by exhaustive enumeration.
/// Exponential in the task count; guarded at `m <= 12`.
pub fn solve_exhaustive(normalized: &NormalizedMatrix, budget: usize) -> Result<GroupingPlan> {
    Ok(solve_exhaustive_with_stats(normalized, budget)?.0)
}

pub fn solve_exhaustive_with_stats(
    normalized: &NormalizedMatrix,
    budget: usize,
) -> Result<(GroupingPlan, SolveStats)> {
    solve(normalized, budget, SearchOrder::SizeThenMask, false)
}

/// Same objective and optimum as [`solve_exhaustive`], pruning partial
/// collections whose admissible lower bound (best-possible cost of every
/// task over chosen and remaining groups) cannot beat the incumbent.
pub fn solve_branch_and_bound(normalized: &NormalizedMatrix, budget: usize) -> Result<GroupingPlan> {
    Ok(solve_branch_and_bound_with_stats(normalized, budget)?.0)
}

pub fn solve_branch_and_bound_with_stats(
    normalized: &NormalizedMatrix,
    budget: usize,
) -> Result<(GroupingPlan, SolveStats)> {
    solve(normalized, budget, SearchOrder::PromisingFirst, true)
}
