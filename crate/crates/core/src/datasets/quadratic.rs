//! Random quadratic task suites over a shared parameter vector.
//!
//! Task 0 is the stiff task: its curvature matrix has eigenvalues spread
//! over `[1, kappa]` along a seeded random rotation. Remaining tasks use
//! the identity. Well centers draw uniformly from a box of the requested
//! spread. Splits carry dummy examples only; the losses are closed-form
//! functions of the shared parameters and the split sizes just set how many
//! steps an epoch contains.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datasets::{
    split_pool, Dataset, DatasetSpec, QuadraticSuite, SerializedQuadraticTask, TaskKind,
};
use crate::error::{Error, Result};
use crate::net::{QuadraticModel, TaskLabels};

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let DatasetSpec::RandomQuadratic { seed, tasks, dim, kappa, center_spread, train, valid, test } =
        spec
    else {
        return Err(Error::Config("not a random-quadratic spec".into()));
    };
    if *tasks == 0 || *dim == 0 {
        return Err(Error::Config("tasks and dim must be >= 1".into()));
    }
    if !(kappa.is_finite() && *kappa >= 1.0) {
        return Err(Error::Config(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(center_spread.is_finite() && *center_spread >= 0.0) {
        return Err(Error::Config("center_spread must be finite and >= 0".into()));
    }
    if *train == 0 {
        return Err(Error::Config("train split must be non-empty".into()));
    }
    let suite = build_suite(*seed, *tasks, *dim, *kappa, *center_spread);

    // Dummy tabular splits: zero features, zero regression targets.
    let total = train + valid + test;
    let features = vec![0.0; total];
    let labels = vec![TaskLabels::Real { dim: 1, values: vec![0.0; total] }; *tasks];
    let task_kinds = vec![TaskKind::Regression { dim: 1 }; *tasks];
    let mut dataset = split_pool(spec, 1, task_kinds, features, labels, [*train, *valid, *test]);
    dataset.quadratic = Some(suite);
    Ok(dataset)
}

fn build_suite(seed: u64, tasks: usize, dim: usize, kappa: f64, center_spread: f64) -> QuadraticSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tasks);
    for task in 0..tasks {
        let matrix = if task == 0 && kappa > 1.0 {
            stiff_matrix(dim, kappa, &mut rng)
        } else {
            identity(dim)
        };
        let center: Vec<f64> =
            (0..dim).map(|_| rng.gen_range(-1.0..1.0) * center_spread).collect();
        out.push(SerializedQuadraticTask { matrix, center });
    }
    QuadraticSuite { dim, tasks: out }
}

fn identity(dim: usize) -> Vec<f64> {
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        a[i * dim + i] = 1.0;
    }
    a
}

/// `Q diag(1..kappa) Q'` for a seeded random rotation `Q`, symmetrized.
fn stiff_matrix(dim: usize, kappa: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let q = random_rotation(dim, rng);
    let eigs: Vec<f64> = (0..dim)
        .map(|i| {
            if dim == 1 {
                kappa
            } else {
                1.0 + (kappa - 1.0) * i as f64 / (dim - 1) as f64
            }
        })
        .collect();
    let mut a = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let mut v = 0.0;
            for (k, &lambda) in eigs.iter().enumerate() {
                v += q[r * dim + k] * lambda * q[c * dim + k];
            }
            a[r * dim + c] = v;
        }
    }
    // Exact symmetry despite rounding.
    for r in 0..dim {
        for c in (r + 1)..dim {
            let v = 0.5 * (a[r * dim + c] + a[c * dim + r]);
            a[r * dim + c] = v;
            a[c * dim + r] = v;
        }
    }
    a
}

fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Gram-Schmidt on a Gaussian matrix, columns as the rotation.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &cols {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        cols.push(v);
    }
    let mut q = vec![0.0; dim * dim];
    for (c, col) in cols.iter().enumerate() {
        for r in 0..dim {
            q[r * dim + c] = col[r];
        }
    }
    q
}

/// Builds the closed-form model for a generated quadratic dataset.
pub fn model_from(dataset: &Dataset) -> Result<QuadraticModel> {
    let suite = dataset
        .quadratic
        .as_ref()
        .ok_or_else(|| Error::Config("dataset carries no quadratic suite".into()))?;
    QuadraticModel::new(suite.dim, suite.to_tasks())
}
