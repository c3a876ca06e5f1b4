//! Loss-landscape probing around a training state.
//!
//! 1-D: per-task losses along the line from the current shared parameters
//! through the simulated optimizer update, extended past the update point
//! (default 3x) to expose curvature along the step. 2-D: losses on a grid
//! spanned by two seeded random directions, each rescaled to the shared
//! parameter norm, over `[-r, +r]^2` in units of that norm. Probes never
//! mutate model, parameter, or optimizer state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;
use crate::linalg;
use crate::net::{Batch, MultiTaskModel, OptimizerState, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub enum LandscapeAxes {
    OneD {
        /// `simulate_update(candidate) - shared`; alpha = 1 is the update.
        direction: Vec<f64>,
        alphas: Vec<f64>,
        /// Index of the sample at exactly alpha = 1, when the grid hits it.
        unit_index: Option<usize>,
    },
    TwoD {
        d1: Vec<f64>,
        d2: Vec<f64>,
        us: Vec<f64>,
        vs: Vec<f64>,
    },
}

/// Sampled per-task losses over a probe grid. For 2-D probes samples are
/// row-major over `(u, v)`: index `ui * n + vi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub axes: LandscapeAxes,
    pub samples: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn num_tasks(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Sum of per-task losses at each sample.
    pub fn totals(&self) -> Vec<f64> {
        self.samples.iter().map(|row| row.iter().sum()).collect()
    }

    /// Mean of per-task losses at each sample (the "combined" surface).
    pub fn means(&self) -> Vec<f64> {
        let m = self.num_tasks() as f64;
        self.totals().into_iter().map(|t| t / m).collect()
    }

    /// Flat index of the minimum total loss.
    pub fn argmin_total(&self) -> usize {
        let totals = self.totals();
        totals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// `(ui, vi)` coordinates of the minimum total loss on a 2-D grid.
    pub fn argmin_total_2d(&self) -> Option<(usize, usize)> {
        match &self.axes {
            LandscapeAxes::TwoD { vs, .. } => {
                let flat = self.argmin_total();
                Some((flat / vs.len(), flat % vs.len()))
            }
            LandscapeAxes::OneD { .. } => None,
        }
    }
}

/// Losses along the candidate's update direction at `n` uniform points over
/// `[0, extent]`. The samples at alpha = 0 and alpha = 1 (when on the grid)
/// reuse the baseline and simulated parameters directly, so they match
/// those evaluations bit for bit.
pub fn probe_1d(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    opt: &OptimizerState,
    candidate: &[f64],
    samples: usize,
    extent: f64,
) -> Result<LandscapeGrid> {
    if samples < 2 {
        return Err(Error::Config("probe_1d needs at least 2 samples".into()));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(Error::Config("extent must be finite and > 0".into()));
    }
    let target = opt.simulate_shared_update(&params.shared, candidate)?;
    let direction: Vec<f64> =
        target.iter().zip(&params.shared).map(|(t, s)| t - s).collect();
    let alphas = linalg::linspace(0.0, extent, samples);
    let unit_index = alphas.iter().position(|&a| a == 1.0);
    let mut rows = Vec::with_capacity(samples);
    for &alpha in &alphas {
        let shared = if alpha == 0.0 {
            params.shared.clone()
        } else if alpha == 1.0 {
            target.clone()
        } else {
            let mut s = params.shared.clone();
            linalg::axpy(alpha, &direction, &mut s);
            s
        };
        let probe = ParamSet { shared, tasks: params.tasks.clone(), layout: params.layout.clone() };
        rows.push(model.forward_losses(&probe, batch)?);
    }
    Ok(LandscapeGrid { axes: LandscapeAxes::OneD { direction, alphas, unit_index }, samples: rows })
}

/// Losses on an `n x n` grid spanned by two seeded random directions, each
/// rescaled to the shared parameter norm, over `[-range, +range]^2`.
pub fn probe_2d(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    seed: u64,
    samples: usize,
    range: f64,
) -> Result<LandscapeGrid> {
    if samples < 3 {
        return Err(Error::Config("probe_2d needs at least 3 samples per axis".into()));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::Config("range must be finite and > 0".into()));
    }
    let param_norm = linalg::norm(&params.shared);
    if param_norm == 0.0 {
        return Err(Error::Infeasible("shared parameter norm is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_direction = || -> Vec<f64> {
        let v: Vec<f64> = (0..params.shared.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scale = param_norm / linalg::norm(&v);
        linalg::scaled(scale, &v)
    };
    let d1 = sample_direction();
    let d2 = sample_direction();
    let us = linalg::linspace(-range, range, samples);
    let vs = us.clone();
    let mut rows = Vec::with_capacity(samples * samples);
    for &u in &us {
        for &v in &vs {
            let shared = if u == 0.0 && v == 0.0 {
                params.shared.clone()
            } else {
                let mut s = params.shared.clone();
                linalg::axpy(u, &d1, &mut s);
                linalg::axpy(v, &d2, &mut s);
                s
            };
            let probe =
                ParamSet { shared, tasks: params.tasks.clone(), layout: params.layout.clone() };
            rows.push(model.forward_losses(&probe, batch)?);
        }
    }
    Ok(LandscapeGrid { axes: LandscapeAxes::TwoD { d1, d2, us, vs }, samples: rows })
}

/// Metadata sidecar for a grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeMeta {
    pub kind: String,
    pub step: usize,
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_seed: Option<u64>,
    pub direction_norms: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_alpha_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmin: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
}

/// Writes a grid as dense CSV: one row per sample holding the coordinates,
/// each task's loss, and the total.
pub fn write_grid(path: &Path, grid: &LandscapeGrid, meta: Option<&LandscapeMeta>) -> Result<()> {
    let m = grid.num_tasks();
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let task_cols = (0..m).map(|t| format!("task_{t}"));
    match &grid.axes {
        LandscapeAxes::OneD { alphas, .. } => {
            let mut header = vec!["alpha".to_string()];
            header.extend(task_cols);
            header.push("total".into());
            writer.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
            for (row, &alpha) in grid.samples.iter().zip(alphas) {
                let mut record = vec![format!("{alpha:.16e}")];
                record.extend(row.iter().map(|l| format!("{l:.16e}")));
                record.push(format!("{:.16e}", row.iter().sum::<f64>()));
                writer.write_record(&record).map_err(|e| Error::parse(path, e.to_string()))?;
            }
        }
        LandscapeAxes::TwoD { us, vs, .. } => {
            let mut header = vec!["u".to_string(), "v".to_string()];
            header.extend(task_cols);
            header.push("total".into());
            writer.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
            for (ui, &u) in us.iter().enumerate() {
                for (vi, &v) in vs.iter().enumerate() {
                    let row = &grid.samples[ui * vs.len() + vi];
                    let mut record = vec![format!("{u:.16e}"), format!("{v:.16e}")];
                    record.extend(row.iter().map(|l| format!("{l:.16e}")));
                    record.push(format!("{:.16e}", row.iter().sum::<f64>()));
                    writer.write_record(&record).map_err(|e| Error::parse(path, e.to_string()))?;
                }
            }
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    io_util::write_atomic(path, &bytes)?;
    if let Some(meta) = meta {
        let json = serde_json::to_string_pretty(meta)
            .map_err(|e| Error::Config(format!("landscape metadata serialization failed: {e}")))?;
        let mut name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        name.push_str(".meta.json");
        io_util::write_atomic(&path.with_file_name(name), json.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::quadratic::{dummy_batch, toy_two_well};
    use crate::net::{OptimizerInit, OptimizerKind, QuadraticModel, QuadraticTask};
    use crate::transference::LookaheadContext;

    fn sgd(lr: f64, layout: &crate::net::Layout) -> OptimizerState {
        OptimizerState::new(
            &OptimizerInit { kind: OptimizerKind::Sgd, learning_rate: lr, momentum: 0.0 },
            layout,
        )
        .unwrap()
    }

    fn toy_state() -> (QuadraticModel, ParamSet, Batch) {
        let model = toy_two_well();
        let params =
            ParamSet { shared: vec![0.5], tasks: vec![vec![], vec![]], layout: model.layout() };
        (model, params, dummy_batch(2))
    }

    #[test]
    fn alpha_zero_matches_baseline_bit_for_bit() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let grid = probe_1d(&model, &params, &batch, &opt, &[1.0], 7, 3.0).unwrap();
        let baseline = model.forward_losses(&params, &batch).unwrap();
        assert_eq!(grid.samples[0], baseline);
    }

    #[test]
    fn toy_update_point_total_is_0_52() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        // extent 3 with 7 samples puts alpha = 1 exactly on the grid.
        let grid = probe_1d(&model, &params, &batch, &opt, &[1.0], 7, 3.0).unwrap();
        let LandscapeAxes::OneD { unit_index, .. } = &grid.axes else { panic!() };
        let idx = unit_index.expect("alpha = 1 lies on this grid");
        let total: f64 = grid.samples[idx].iter().sum();
        assert!((total - 0.52).abs() < 1e-12, "{total}");
    }

    #[test]
    fn unit_alpha_reproduces_the_lookahead_bit_for_bit() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let candidate = vec![0.7];
        let grid = probe_1d(&model, &params, &batch, &opt, &candidate, 7, 3.0).unwrap();
        let LandscapeAxes::OneD { unit_index, .. } = &grid.axes else { panic!() };
        let ctx = LookaheadContext::new(&model, &params, &batch, &opt, &params.tasks).unwrap();
        let lookahead = ctx.lookahead_losses(&candidate).unwrap();
        assert_eq!(grid.samples[unit_index.unwrap()], lookahead);
    }

    #[test]
    fn quadratic_curve_is_a_parabola_in_alpha() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.15, &params.layout);
        let grid = probe_1d(&model, &params, &batch, &opt, &[0.9], 13, 3.0).unwrap();
        let LandscapeAxes::OneD { alphas, .. } = &grid.axes else { panic!() };
        let totals = grid.totals();
        // Least-squares fit of total(alpha) = a + b alpha + c alpha^2 via
        // normal equations, then check the max residual.
        let n = alphas.len() as f64;
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
        for (&x, &y) in alphas.iter().zip(&totals) {
            s1 += x;
            s2 += x * x;
            s3 += x * x * x;
            s4 += x * x * x * x;
            t0 += y;
            t1 += x * y;
            t2 += x * x * y;
        }
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let base = [[n, s1, s2], [s1, s2, s3], [s2, s3, s4]];
        let d = det3(base);
        let col = |k: usize| {
            let mut m = base;
            for (row, &t) in m.iter_mut().zip([t0, t1, t2].iter()) {
                row[k] = t;
            }
            det3(m) / d
        };
        let (a, b, c) = (col(0), col(1), col(2));
        let max_residual = alphas
            .iter()
            .zip(&totals)
            .map(|(&x, &y)| (y - (a + b * x + c * x * x)).abs())
            .fold(0.0, f64::max);
        assert!(max_residual <= 1e-10, "residual {max_residual}");
    }

    #[test]
    fn two_d_center_and_direction_norms() {
        let model = QuadraticModel::new(
            2,
            vec![
                QuadraticTask { matrix: vec![1.0, 0.0, 0.0, 1.0], center: vec![0.1, 0.0] },
                QuadraticTask { matrix: vec![2.0, 0.0, 0.0, 0.5], center: vec![0.0, -0.1] },
            ],
        )
        .unwrap();
        let params = ParamSet {
            shared: vec![0.3, -0.2],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let grid = probe_2d(&model, &params, &batch, 42, 5, 0.1).unwrap();
        let LandscapeAxes::TwoD { d1, d2, us, vs } = &grid.axes else { panic!() };
        let param_norm = (0.3f64 * 0.3 + 0.2 * 0.2).sqrt();
        assert!((norm(d1) - param_norm).abs() <= 1e-12);
        assert!((norm(d2) - param_norm).abs() <= 1e-12);
        // The center cell equals the baseline exactly.
        let ci = us.iter().position(|&u| u == 0.0).unwrap();
        let cj = vs.iter().position(|&v| v == 0.0).unwrap();
        let baseline = model.forward_losses(&params, &batch).unwrap();
        assert_eq!(grid.samples[ci * vs.len() + cj], baseline);
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn convex_quadratic_argmin_is_interior_when_the_well_is_probed() {
        // Identical wells at the current parameters: the grid minimum of the
        // total loss must be the center cell, strictly interior.
        let model = QuadraticModel::new(
            2,
            vec![
                QuadraticTask { matrix: vec![1.0, 0.0, 0.0, 1.0], center: vec![0.5, 0.5] },
                QuadraticTask { matrix: vec![1.0, 0.0, 0.0, 1.0], center: vec![0.5, 0.5] },
            ],
        )
        .unwrap();
        let params = ParamSet {
            shared: vec![0.5, 0.5],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let grid = probe_2d(&model, &params, &batch, 7, 7, 0.1).unwrap();
        let (ui, vi) = grid.argmin_total_2d().unwrap();
        assert!((1..6).contains(&ui) && (1..6).contains(&vi), "argmin ({ui}, {vi})");
        assert_eq!((ui, vi), (3, 3));
    }

    #[test]
    fn probes_do_not_mutate_state() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let params_before = params.clone();
        let opt_before = opt.clone();
        probe_1d(&model, &params, &batch, &opt, &[1.0], 5, 3.0).unwrap();
        probe_2d(&model, &params, &batch, 3, 3, 0.1).unwrap();
        assert_eq!(params, params_before);
        assert_eq!(opt, opt_before);
    }

    #[test]
    fn zero_parameter_norm_is_rejected_for_2d() {
        let (model, mut params, batch) = toy_state();
        params.shared[0] = 0.0;
        assert!(matches!(
            probe_2d(&model, &params, &batch, 1, 3, 0.1),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn grid_csv_shape() {
        let (model, params, batch) = toy_state();
        let grid = probe_2d(&model, &params, &batch, 9, 5, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        write_grid(&path, &grid, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Header plus 25 sample rows.
        assert_eq!(text.lines().count(), 26);
        assert!(text.starts_with("u,v,task_0,task_1,total"));
    }
}
