//! Gradient candidates: rules that turn per-task shared gradients into one
//! shared-parameter update direction.
//!
//! Built-in mechanisms: the combined sum over all tasks, sums over task
//! subsets, and PCGrad-style projection of conflicting gradients. Candidate
//! ids are stable strings so configs and logs reference them portably.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// A named gradient mechanism. `produce` is deterministic given the
/// gradients and the rng seed, and its output matches the shared block's
/// shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientCandidate {
    id: String,
    spec: CandidateSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateSpec {
    Combined,
    Subset(Vec<usize>),
    PcGrad,
}

impl GradientCandidate {
    pub fn combined() -> Self {
        GradientCandidate { id: "combined".into(), spec: CandidateSpec::Combined }
    }

    pub fn pcgrad() -> Self {
        GradientCandidate { id: "pcgrad".into(), spec: CandidateSpec::PcGrad }
    }

    pub fn subset(tasks: &[usize]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("subset candidate needs at least one task".into()));
        }
        let mut sorted: Vec<usize> = tasks.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let inner = sorted.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        Ok(GradientCandidate { id: format!("subset:{{{inner}}}"), spec: CandidateSpec::Subset(sorted) })
    }

    /// Single-task candidate, a convenience for `subset:{i}`.
    pub fn single(task: usize) -> Self {
        GradientCandidate::subset(&[task]).expect("singleton subset is always valid")
    }

    /// Parses a candidate id: `combined`, `pcgrad`, or `subset:` followed by
    /// comma-separated task indices (braces optional).
    pub fn parse(id: &str) -> Result<Self> {
        let id = id.trim();
        match id {
            "combined" => Ok(GradientCandidate::combined()),
            "pcgrad" => Ok(GradientCandidate::pcgrad()),
            _ if id.starts_with("subset:") => {
                let inner = id["subset:".len()..].trim().trim_start_matches('{').trim_end_matches('}');
                if inner.is_empty() {
                    return Err(Error::Config(format!("subset candidate '{id}' lists no tasks")));
                }
                let tasks = inner
                    .split(',')
                    .map(|part| {
                        part.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad task index '{part}' in '{id}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                GradientCandidate::subset(&tasks)
            }
            _ => Err(Error::Config(format!("unknown gradient candidate '{id}'"))),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &CandidateSpec {
        &self.spec
    }

    /// Validates the candidate against the task count.
    pub fn check_tasks(&self, num_tasks: usize) -> Result<()> {
        if let CandidateSpec::Subset(tasks) = &self.spec {
            if let Some(&bad) = tasks.iter().find(|&&t| t >= num_tasks) {
                return Err(Error::Config(format!(
                    "candidate '{}' references task {bad}, model has {num_tasks}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn produce(&self, grads: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match &self.spec {
            CandidateSpec::Combined => Ok(combined(grads)),
            CandidateSpec::Subset(tasks) => subset(grads, tasks),
            CandidateSpec::PcGrad => Ok(pcgrad(grads, rng)),
        }
    }
}

/// Elementwise sum of all per-task shared gradients.
pub fn combined(grads: &[Vec<f64>]) -> Vec<f64> {
    let dim = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for g in grads {
        linalg::axpy(1.0, g, &mut out);
    }
    out
}

/// Sum over a task subset.
pub fn subset(grads: &[Vec<f64>], tasks: &[usize]) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(Error::Config("subset of tasks is empty".into()));
    }
    let dim = grads.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for &t in tasks {
        let g = grads
            .get(t)
            .ok_or_else(|| Error::Config(format!("task index {t} out of range")))?;
        linalg::axpy(1.0, g, &mut out);
    }
    Ok(out)
}

/// Projects away pairwise conflicts, then sums.
///
/// For each task `i` (visited in rng-shuffled order), start from
/// `g_i' = g_i`; for each other task `j` in a fresh rng-shuffled order, if
/// `<g_i', g_j> < 0` then `g_i' <- g_i' - (<g_i', g_j> / |g_j|^2) g_j`.
/// Zero-norm conflict partners are skipped (the projection is undefined).
/// Returns the per-task results summed in task-index order, so
/// non-conflicting inputs reproduce [`combined`] exactly.
pub fn pcgrad(grads: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = grads.len();
    let dim = grads.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut projected: Vec<Option<Vec<f64>>> = vec![None; m];
    for &i in &order {
        let mut gi = grads[i].clone();
        let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        others.shuffle(rng);
        for &j in &others {
            let gj = &grads[j];
            let conflict = linalg::dot(&gi, gj);
            if conflict < 0.0 {
                let norm_sq = linalg::dot(gj, gj);
                if norm_sq == 0.0 {
                    continue;
                }
                linalg::axpy(-conflict / norm_sq, gj, &mut gi);
            }
        }
        projected[i] = Some(gi);
    }
    let mut out = vec![0.0; dim];
    for gi in projected.into_iter().flatten() {
        linalg::axpy(1.0, &gi, &mut out);
    }
    out
}
