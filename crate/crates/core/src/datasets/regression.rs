//! Linear regression task suites with prescribed pairwise relatedness.
//!
//! Task `i` targets `y_i = w_i' x + noise`, with the weight vectors
//! constructed so that `cos(w_i, w_j)` equals the requested relatedness:
//! the relatedness (Gram) matrix is factored through its symmetric square
//! root and applied to an orthonormal basis. Feasibility is exact: the
//! Gram matrix is rejected iff it has an eigenvalue below -1e-10.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datasets::{quantize_f32, split_pool, Dataset, DatasetSpec, TaskKind};
use crate::error::{Error, Result};
use crate::net::TaskLabels;

const EIGEN_TOLERANCE: f64 = 1e-10;

fn gram_matrix(tasks: usize, rho: f64, rho_matrix: &Option<Vec<Vec<f64>>>) -> Result<DMatrix<f64>> {
    if let Some(rows) = rho_matrix {
        if rows.len() != tasks || rows.iter().any(|r| r.len() != tasks) {
            return Err(Error::Config(format!("rho_matrix must be {tasks} x {tasks}")));
        }
        let g = DMatrix::from_fn(tasks, tasks, |i, j| rows[i][j]);
        for i in 0..tasks {
            if (g[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Config("rho_matrix diagonal must be 1".into()));
            }
            for j in 0..tasks {
                if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config("rho_matrix must be symmetric".into()));
                }
            }
        }
        Ok(g)
    } else {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Infeasible(format!("rho must lie in [-1, 1], got {rho}")));
        }
        Ok(DMatrix::from_fn(tasks, tasks, |i, j| if i == j { 1.0 } else { rho }))
    }
}

/// Symmetric PSD square root, with the exact feasibility guard.
fn gram_sqrt(g: &DMatrix<f64>, tasks: usize) -> Result<DMatrix<f64>> {
    let eigen = g.clone().symmetric_eigen();
    let mut min_eig = f64::INFINITY;
    for &lambda in eigen.eigenvalues.iter() {
        min_eig = min_eig.min(lambda);
    }
    if min_eig < -EIGEN_TOLERANCE {
        let bound = if tasks > 1 { -1.0 / (tasks as f64 - 1.0) } else { -1.0 };
        return Err(Error::Infeasible(format!(
            "relatedness matrix is not positive semidefinite (eigenvalue {min_eig:.3e}); \
             a uniform rho is feasible only for rho >= {bound:.6}"
        )));
    }
    let sqrt_vals = DVector::from_iterator(
        tasks,
        eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let u = eigen.eigenvectors;
    Ok(&u * DMatrix::from_diagonal(&sqrt_vals) * u.transpose())
}

/// The task weight vectors this spec generates, unit norm, pairwise cosines
/// matching the relatedness matrix. Deterministic in the spec seed.
pub fn task_weight_vectors(spec: &DatasetSpec) -> Result<Vec<Vec<f64>>> {
    let DatasetSpec::RelatedRegression { seed, tasks, input_dim, rho, rho_matrix, .. } = spec else {
        return Err(Error::Config("not a related-regression spec".into()));
    };
    let (m, d) = (*tasks, *input_dim);
    if m == 0 {
        return Err(Error::Config("tasks must be >= 1".into()));
    }
    if d < m {
        return Err(Error::Config(format!("input_dim {d} must be >= tasks {m}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(*seed, 0x57));

    // Duplicated tasks exactly, not just to rounding.
    if rho_matrix.is_none() && *rho == 1.0 {
        let w = random_unit_vector(d, &mut rng);
        return Ok(vec![w; m]);
    }

    let g = gram_matrix(m, *rho, rho_matrix)?;
    let s = gram_sqrt(&g, m)?;
    let basis = orthonormal_basis(d, m, &mut rng);
    // w_i = sum_k S[k][i] u_k, then normalized to unit length.
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut w = vec![0.0; d];
        for k in 0..m {
            let coef = s[(k, i)];
            for (wv, bv) in w.iter_mut().zip(&basis[k]) {
                *wv += coef * bv;
            }
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::NonFinite("degenerate weight vector".into()));
        }
        for wv in w.iter_mut() {
            *wv /= norm;
        }
        out.push(w);
    }
    Ok(out)
}

fn random_unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// `m` orthonormal vectors in `R^d` via twice-run modified Gram-Schmidt.
fn orthonormal_basis(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &basis {
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
        basis.push(v);
    }
    basis
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let DatasetSpec::RelatedRegression { train, valid, test, seed, tasks, input_dim, noise, .. } =
        spec
    else {
        return Err(Error::Config("not a related-regression spec".into()));
    };
    if *train == 0 {
        return Err(Error::Config("train split must be non-empty".into()));
    }
    if !(noise.is_finite() && *noise >= 0.0) {
        return Err(Error::Config("noise must be finite and >= 0".into()));
    }
    let weights = task_weight_vectors(spec)?;
    let (m, d) = (*tasks, *input_dim);
    let total = train + valid + test;
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let mut features = Vec::with_capacity(total * d);
    let mut targets: Vec<Vec<f64>> = vec![Vec::with_capacity(total); m];
    for _ in 0..total {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (i, w) in weights.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + noise * eps;
            targets[i].push(y);
        }
        features.extend_from_slice(&x);
    }
    quantize_f32(&mut features);
    let labels = targets
        .into_iter()
        .map(|mut values| {
            quantize_f32(&mut values);
            TaskLabels::Real { dim: 1, values }
        })
        .collect();
    let task_kinds = vec![TaskKind::Regression { dim: 1 }; m];
    Ok(split_pool(spec, d, task_kinds, features, labels, [*train, *valid, *test]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate;

    fn spec(tasks: usize, input_dim: usize, rho: f64, seed: u64) -> DatasetSpec {
        DatasetSpec::RelatedRegression {
            train: 64,
            valid: 16,
            test: 16,
            seed,
            tasks,
            input_dim,
            rho,
            rho_matrix: None,
            noise: 0.0,
        }
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn rho_one_duplicates_the_tasks_exactly() {
        let s = spec(3, 8, 1.0, 2);
        let w = task_weight_vectors(&s).unwrap();
        assert_eq!(w[0], w[1]);
        assert_eq!(w[0], w[2]);
        let d = generate(&s).unwrap();
        assert_eq!(d.train.labels[0], d.train.labels[1]);
    }

    #[test]
    fn rho_zero_gives_orthogonal_weights() {
        let w = task_weight_vectors(&spec(2, 6, 0.0, 3)).unwrap();
        assert!(cosine(&w[0], &w[1]).abs() <= 1e-12);
    }

    #[test]
    fn three_tasks_at_half_rho_hit_the_target_cosines() {
        let w = task_weight_vectors(&spec(3, 10, 0.5, 4)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.5 };
                assert!(
                    (cosine(&w[i], &w[j]) - expect).abs() <= 1e-12,
                    "({i},{j}): {}",
                    cosine(&w[i], &w[j])
                );
            }
        }
    }

    #[test]
    fn infeasible_rho_is_rejected_with_the_bound() {
        // For m = 3 the bound is -1/2.
        let err = task_weight_vectors(&spec(3, 10, -0.75, 5));
        match err {
            Err(Error::Infeasible(message)) => {
                assert!(message.contains("-0.5"), "{message}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        // The boundary itself is feasible.
        assert!(task_weight_vectors(&spec(3, 10, -0.5, 5)).is_ok());
    }

    #[test]
    fn mixed_relatedness_matrix_is_honored() {
        let rho_matrix = vec![
            vec![1.0, 0.9, 0.0, 0.1],
            vec![0.9, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, -0.3],
            vec![0.1, 0.0, -0.3, 1.0],
        ];
        let s = DatasetSpec::RelatedRegression {
            train: 16,
            valid: 0,
            test: 0,
            seed: 6,
            tasks: 4,
            input_dim: 8,
            rho: 0.0,
            rho_matrix: Some(rho_matrix.clone()),
            noise: 0.0,
        };
        let w = task_weight_vectors(&s).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (cosine(&w[i], &w[j]) - rho_matrix[i][j]).abs() <= 1e-10,
                    "({i},{j}): {} vs {}",
                    cosine(&w[i], &w[j]),
                    rho_matrix[i][j]
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(2, 5, 0.3, 11)).unwrap();
        let b = generate(&spec(2, 5, 0.3, 11)).unwrap();
        assert_eq!(a, b);
    }
}
