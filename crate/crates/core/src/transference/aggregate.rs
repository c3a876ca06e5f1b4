//! Step -> epoch -> run aggregation of per-minibatch transference, and
//! self-transference normalization.

use crate::error::{Error, Result};
use crate::transference::{SquareMatrix, EPS_SELF};

/// Where a recorded transference value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Task(usize),
    Mechanism(String),
}

/// One per-step transference observation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferenceRecord {
    pub step: usize,
    pub source: Source,
    pub target: usize,
    pub value: f64,
}

/// Run-aggregated scores `t(b, a)`: row = source task b, column = target
/// task a. The diagonal holds self-transference aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferenceMatrix {
    pub scores: SquareMatrix,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMatrix {
    pub epoch: usize,
    pub scores: SquareMatrix,
}

/// Aggregates task-sourced records into per-epoch matrices (mean over each
/// epoch's steps) and one run-level matrix (mean over all steps). Records
/// must cover a contiguous step range; mechanism-sourced records are not
/// aggregated into matrices.
pub fn aggregate(
    records: &[TransferenceRecord],
    num_tasks: usize,
    steps_per_epoch: usize,
) -> Result<(Vec<EpochMatrix>, TransferenceMatrix)> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if steps_per_epoch == 0 {
        return Err(Error::Config("steps_per_epoch must be >= 1".into()));
    }
    let mut min_step = usize::MAX;
    let mut max_step = 0usize;
    let mut steps_seen = std::collections::BTreeSet::new();
    for rec in records {
        let source = match &rec.source {
            Source::Task(b) => *b,
            Source::Mechanism(id) => {
                return Err(Error::Config(format!(
                    "matrix aggregation needs task sources, found mechanism '{id}'"
                )))
            }
        };
        if source >= num_tasks || rec.target >= num_tasks {
            return Err(Error::Shape(format!(
                "record ({source} -> {}) outside {num_tasks} tasks",
                rec.target
            )));
        }
        min_step = min_step.min(rec.step);
        max_step = max_step.max(rec.step);
        steps_seen.insert(rec.step);
    }
    if steps_seen.len() != max_step - min_step + 1 {
        return Err(Error::NonContiguousRecords(format!(
            "saw {} distinct steps across range {min_step}..={max_step}",
            steps_seen.len()
        )));
    }

    let num_epochs = (max_step - min_step) / steps_per_epoch + 1;
    let mut epoch_sum = vec![SquareMatrix::zeros(num_tasks); num_epochs];
    let mut epoch_count = vec![SquareMatrix::zeros(num_tasks); num_epochs];
    let mut run_sum = SquareMatrix::zeros(num_tasks);
    let mut run_count = SquareMatrix::zeros(num_tasks);

    // Fold in canonical (step, source, target) order so the result is
    // exactly invariant to the input permutation.
    let mut ordered: Vec<&TransferenceRecord> = records.iter().collect();
    ordered.sort_by_key(|rec| {
        let source = match &rec.source {
            Source::Task(b) => *b,
            Source::Mechanism(_) => unreachable!("checked above"),
        };
        (rec.step, source, rec.target)
    });
    for rec in ordered {
        let source = match &rec.source {
            Source::Task(b) => *b,
            Source::Mechanism(_) => unreachable!("checked above"),
        };
        let epoch = (rec.step - min_step) / steps_per_epoch;
        let sum = epoch_sum[epoch].get(source, rec.target) + rec.value;
        epoch_sum[epoch].set(source, rec.target, sum);
        let count = epoch_count[epoch].get(source, rec.target) + 1.0;
        epoch_count[epoch].set(source, rec.target, count);
        let sum = run_sum.get(source, rec.target) + rec.value;
        run_sum.set(source, rec.target, sum);
        let count = run_count.get(source, rec.target) + 1.0;
        run_count.set(source, rec.target, count);
    }

    let mean = |sum: &SquareMatrix, count: &SquareMatrix| {
        SquareMatrix::from_fn(num_tasks, |b, a| {
            let n = count.get(b, a);
            if n > 0.0 {
                sum.get(b, a) / n
            } else {
                0.0
            }
        })
    };

    let epochs = epoch_sum
        .iter()
        .zip(&epoch_count)
        .enumerate()
        .map(|(epoch, (sum, count))| EpochMatrix { epoch, scores: mean(sum, count) })
        .collect();
    let run = TransferenceMatrix {
        scores: mean(&run_sum, &run_count),
        step_count: max_step - min_step + 1,
    };
    Ok((epochs, run))
}

/// Normalized scores `t_hat(b, a) = 1 - t(b, a) / t(a, a)`, with per-column
/// validity flags. A column is invalid when its self-transference is at or
/// below [`EPS_SELF`]; invalid columns hold NaN and are excluded from
/// grouping objectives. Valid diagonals are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    pub scores: SquareMatrix,
    pub valid: Vec<bool>,
}

impl NormalizedMatrix {
    pub fn size(&self) -> usize {
        self.scores.size()
    }

    /// Builds directly from normalized scores, marking every column valid.
    /// Useful for tests and for loading externally produced matrices.
    pub fn from_scores(scores: SquareMatrix) -> Self {
        let valid = vec![true; scores.size()];
        NormalizedMatrix { scores, valid }
    }
}

pub fn normalize(matrix: &TransferenceMatrix) -> NormalizedMatrix {
    let m = matrix.scores.size();
    let valid: Vec<bool> = (0..m).map(|a| matrix.scores.get(a, a) > EPS_SELF).collect();
    let scores = SquareMatrix::from_fn(m, |b, a| {
        if !valid[a] {
            f64::NAN
        } else if b == a {
            0.0
        } else {
            1.0 - matrix.scores.get(b, a) / matrix.scores.get(a, a)
        }
    });
    NormalizedMatrix { scores, valid }
}
