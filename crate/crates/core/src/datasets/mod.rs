//! Deterministic synthetic multi-task datasets.
//!
//! Three generators sized for desk-scale experiments:
//! - `overlap-glyph`: two procedurally rendered glyphs superimposed with a
//!   controllable horizontal overlap; tasks are the left and right classes.
//! - `related-regression`: linear regression tasks whose weight vectors
//!   have a prescribed pairwise cosine, the oracle for transference-sign
//!   expectations.
//! - `random-quadratic`: closed-form quadratic task suites over a shared
//!   parameter vector, with a controllable curvature ratio.
//!
//! The same spec always produces bit-identical data; splits are disjoint by
//! construction (one pooled draw, partitioned in order). Generated real
//! values are quantized through f32 so in-memory data and the `.mtds`
//! container agree exactly.

pub mod container;
pub mod glyph;
pub mod quadratic;
pub mod regression;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Batch, BatchProvider, DenseNet, ParamSet, QuadraticTask, TaskLabels};
use crate::seed::step_seed;

fn default_raster() -> [usize; 2] {
    [20, 20]
}

fn default_noise() -> f64 {
    0.05
}

fn default_one() -> f64 {
    1.0
}

/// Generator specification. Serializes as a `[dataset]` config table with a
/// `kind` discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DatasetSpec {
    #[serde(rename = "overlap-glyph")]
    OverlapGlyph {
        train: usize,
        valid: usize,
        test: usize,
        seed: u64,
        /// Horizontal overlap fraction of the two glyphs, in [0, 0.9].
        overlap: f64,
        /// [height, width] of the raster.
        #[serde(default = "default_raster")]
        raster: [usize; 2],
    },
    #[serde(rename = "related-regression")]
    RelatedRegression {
        train: usize,
        valid: usize,
        test: usize,
        seed: u64,
        tasks: usize,
        input_dim: usize,
        /// Pairwise weight-vector cosine; feasible iff rho >= -1/(m-1).
        #[serde(default)]
        rho: f64,
        /// Full relatedness matrix (unit diagonal, symmetric, PSD);
        /// overrides `rho` when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho_matrix: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    #[serde(rename = "random-quadratic")]
    RandomQuadratic {
        seed: u64,
        tasks: usize,
        dim: usize,
        /// Condition number of the stiff task's curvature matrix (task 0).
        #[serde(default = "default_one")]
        kappa: f64,
        /// Radius of the uniform box the well centers draw from.
        #[serde(default = "default_one")]
        center_spread: f64,
        /// Nominal example counts; quadratic losses ignore inputs, so these
        /// only set how many steps an epoch contains.
        train: usize,
        #[serde(default)]
        valid: usize,
        #[serde(default)]
        test: usize,
    },
}

impl DatasetSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::OverlapGlyph { .. } => "overlap-glyph",
            DatasetSpec::RelatedRegression { .. } => "related-regression",
            DatasetSpec::RandomQuadratic { .. } => "random-quadratic",
        }
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            DatasetSpec::OverlapGlyph { .. } => 2,
            DatasetSpec::RelatedRegression { tasks, .. } => *tasks,
            DatasetSpec::RandomQuadratic { tasks, .. } => *tasks,
        }
    }
}

/// What one task's labels look like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: usize },
    Regression { dim: usize },
}

/// One split of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSplit {
    pub size: usize,
    /// Row-major `size x input_dim`.
    pub features: Vec<f64>,
    pub labels: Vec<TaskLabels>,
}

impl TabularSplit {
    fn empty(num_tasks: usize, task_kinds: &[TaskKind]) -> Self {
        TabularSplit {
            size: 0,
            features: Vec::new(),
            labels: (0..num_tasks)
                .map(|t| match task_kinds[t] {
                    TaskKind::Classification { .. } => TaskLabels::Class(Vec::new()),
                    TaskKind::Regression { dim } => TaskLabels::Real { dim, values: Vec::new() },
                })
                .collect(),
        }
    }

    /// Materializes the examples at `indices` as one batch.
    pub fn gather(&self, input_dim: usize, indices: &[usize], batch_id: u64) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * input_dim);
        for &i in indices {
            inputs.extend_from_slice(&self.features[i * input_dim..(i + 1) * input_dim]);
        }
        let labels = self
            .labels
            .iter()
            .map(|l| match l {
                TaskLabels::Class(v) => TaskLabels::Class(indices.iter().map(|&i| v[i]).collect()),
                TaskLabels::Real { dim, values } => {
                    let mut out = Vec::with_capacity(indices.len() * dim);
                    for &i in indices {
                        out.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                    }
                    TaskLabels::Real { dim: *dim, values: out }
                }
            })
            .collect();
        Batch { inputs, batch_size: indices.len(), input_dim, labels, batch_id }
    }
}

/// A generated dataset: tabular splits plus, for quadratic suites, the
/// closed-form task definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub input_dim: usize,
    pub task_kinds: Vec<TaskKind>,
    pub train: TabularSplit,
    pub valid: TabularSplit,
    pub test: TabularSplit,
    pub quadratic: Option<QuadraticSuite>,
}

impl Dataset {
    pub fn num_tasks(&self) -> usize {
        self.task_kinds.len()
    }
}

/// Quadratic task suite definition carried alongside its (dummy) splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSuite {
    pub dim: usize,
    pub tasks: Vec<SerializedQuadraticTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedQuadraticTask {
    pub matrix: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticSuite {
    pub fn to_tasks(&self) -> Vec<QuadraticTask> {
        self.tasks
            .iter()
            .map(|t| QuadraticTask { matrix: t.matrix.clone(), center: t.center.clone() })
            .collect()
    }
}

/// Generates the dataset a spec describes.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::OverlapGlyph { .. } => glyph::generate(spec),
        DatasetSpec::RelatedRegression { .. } => regression::generate(spec),
        DatasetSpec::RandomQuadratic { .. } => quadratic::generate(spec),
    }
}

/// Rounds every value through f32, the container storage precision.
pub(crate) fn quantize_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

pub(crate) fn split_pool(
    spec: &DatasetSpec,
    input_dim: usize,
    task_kinds: Vec<TaskKind>,
    pool_features: Vec<f64>,
    pool_labels: Vec<TaskLabels>,
    sizes: [usize; 3],
) -> Dataset {
    let mut splits = Vec::with_capacity(3);
    let mut offset = 0;
    for &n in &sizes {
        let mut split = TabularSplit::empty(task_kinds.len(), &task_kinds);
        split.size = n;
        split.features = pool_features[offset * input_dim..(offset + n) * input_dim].to_vec();
        split.labels = pool_labels
            .iter()
            .map(|labels| match labels {
                TaskLabels::Class(v) => TaskLabels::Class(v[offset..offset + n].to_vec()),
                TaskLabels::Real { dim, values } => TaskLabels::Real {
                    dim: *dim,
                    values: values[offset * dim..(offset + n) * dim].to_vec(),
                },
            })
            .collect();
        splits.push(split);
        offset += n;
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Dataset { spec: spec.clone(), input_dim, task_kinds, train, valid, test, quadratic: None }
}

/// Seeded minibatch source over one split: per-epoch index shuffle, fixed
/// batch size, ragged tail dropped so every epoch has the same step count.
pub struct TrainBatcher<'a> {
    split: &'a TabularSplit,
    input_dim: usize,
    num_tasks: usize,
    batch_size: usize,
    shuffle_seed: u64,
}

impl<'a> TrainBatcher<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if batch_size > dataset.train.size {
            return Err(Error::Config(format!(
                "batch_size {batch_size} exceeds train split of {}",
                dataset.train.size
            )));
        }
        Ok(TrainBatcher {
            split: &dataset.train,
            input_dim: dataset.input_dim,
            num_tasks: dataset.num_tasks(),
            batch_size,
            shuffle_seed,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.split.size / self.batch_size
    }
}

impl BatchProvider for TrainBatcher<'_> {
    fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn batches(&self, epoch: usize) -> Vec<Batch> {
        use rand::seq::SliceRandom;
        let mut indices: Vec<usize> = (0..self.split.size).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(self.shuffle_seed, 0, epoch as u64));
        indices.shuffle(&mut rng);
        let steps = self.steps_per_epoch();
        (0..steps)
            .map(|i| {
                let chunk = &indices[i * self.batch_size..(i + 1) * self.batch_size];
                self.split.gather(self.input_dim, chunk, (epoch * steps + i) as u64)
            })
            .collect()
    }
}

/// Argmax accuracy of one classification task over a split.
pub fn classification_accuracy(
    net: &DenseNet,
    params: &ParamSet,
    dataset: &Dataset,
    split: &TabularSplit,
    task: usize,
) -> Result<f64> {
    let TaskLabels::Class(truth) = &split.labels[task] else {
        return Err(Error::Config(format!("task {task} is not a classification task")));
    };
    if split.size == 0 {
        return Err(Error::Config("empty split".into()));
    }
    let indices: Vec<usize> = (0..split.size).collect();
    let batch = split.gather(dataset.input_dim, &indices, 0);
    let outputs = net.forward_outputs(params, &batch)?;
    let dim = net.out_dims()[task];
    let mut correct = 0usize;
    for (ex, &label) in truth.iter().enumerate() {
        let row = &outputs[task][ex * dim..(ex + 1) * dim];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        if argmax == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.size as f64)
}
