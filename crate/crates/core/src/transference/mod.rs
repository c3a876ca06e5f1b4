//! Transference: the effect of a shared-parameter gradient step on each
//! task's loss.
//!
//! For a candidate gradient `g` and target task `j`, the exact score is the
//! relative loss change under a simulated optimizer step,
//!
//! `Z_j = 1 - L_j(batch, step(g), task_j') / L_j(batch, shared, task_j)`,
//!
//! where the denominator is evaluated at the pre-step parameters and the
//! numerator at the post-step task parameters supplied by the caller. The
//! measure is asymmetric and scale invariant in the target loss. This
//! module also provides its first- and second-order Taylor approximations
//! (both eta-free: callers scale the linear term by eta and the quadratic
//! term by eta squared), the total transference of a candidate (sum over
//! targets), and the log-product alignment score used by the first-order
//! selection fast path.

pub mod aggregate;
pub mod matrix_io;

pub use aggregate::{
    aggregate, normalize, EpochMatrix, NormalizedMatrix, Source, TransferenceMatrix,
    TransferenceRecord,
};

use crate::error::{Error, Result};
use crate::linalg;
use crate::net::{hessian_vector_products, Batch, MultiTaskModel, OptimizerState, ParamSet};

/// Baseline losses at or below this threshold make the transference ratio
/// degenerate and abort the computation.
pub const EPS_LOSS: f64 = 1e-12;

/// Self-transference aggregates at or below this threshold invalidate a
/// normalized-matrix column.
pub const EPS_SELF: f64 = 1e-9;

/// Dense `m x m` score matrix, row = source, column = target. Transference
/// is asymmetric; nothing here ever symmetrizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(size: usize) -> Self {
        SquareMatrix { size, data: vec![0.0; size * size] }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SquareMatrix::zeros(size);
        for source in 0..size {
            for target in 0..size {
                m.set(source, target, f(source, target));
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, source: usize, target: usize) -> f64 {
        self.data[source * self.size + target]
    }

    pub fn set(&mut self, source: usize, target: usize, value: f64) {
        self.data[source * self.size + target] = value;
    }

    pub fn scale(&self, c: f64) -> SquareMatrix {
        SquareMatrix { size: self.size, data: self.data.iter().map(|v| c * v).collect() }
    }

    /// Off-diagonal entries in row-major order, as `(source, target, value)`.
    pub fn off_diagonal(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 0..self.size {
            for t in 0..self.size {
                if s != t {
                    out.push((s, t, self.get(s, t)));
                }
            }
        }
        out
    }
}

/// Validates and returns per-task baseline losses, erroring on degenerate
/// denominators.
pub fn baseline_losses(model: &dyn MultiTaskModel, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
    let losses = model.forward_losses(params, batch)?;
    for (task, &loss) in losses.iter().enumerate() {
        if loss <= EPS_LOSS {
            return Err(Error::DegenerateLoss { task, loss });
        }
    }
    Ok(losses)
}

/// Shared state for evaluating many candidate lookaheads against one
/// baseline: same batch, same pre-step shared parameters, same post-step
/// task parameters, one forward pass per candidate.
pub struct LookaheadContext<'a> {
    model: &'a dyn MultiTaskModel,
    batch: &'a Batch,
    opt: &'a OptimizerState,
    shared: &'a [f64],
    updated_task_params: &'a [Vec<f64>],
    layout: crate::net::Layout,
    base_losses: Vec<f64>,
}

impl<'a> LookaheadContext<'a> {
    pub fn new(
        model: &'a dyn MultiTaskModel,
        params: &'a ParamSet,
        batch: &'a Batch,
        opt: &'a OptimizerState,
        updated_task_params: &'a [Vec<f64>],
    ) -> Result<Self> {
        let base_losses = baseline_losses(model, params, batch)?;
        Self::with_baselines(model, params, batch, opt, updated_task_params, base_losses)
    }

    /// Builds a context around already-computed baseline losses. Callers
    /// that mutate task parameters after measuring the baseline (the
    /// training schedule) use this to keep the pre-step denominators.
    pub fn with_baselines(
        model: &'a dyn MultiTaskModel,
        params: &'a ParamSet,
        batch: &'a Batch,
        opt: &'a OptimizerState,
        updated_task_params: &'a [Vec<f64>],
        base_losses: Vec<f64>,
    ) -> Result<Self> {
        if updated_task_params.len() != model.num_tasks() {
            return Err(Error::Shape(format!(
                "got {} updated task blocks, model has {} tasks",
                updated_task_params.len(),
                model.num_tasks()
            )));
        }
        for (task, &loss) in base_losses.iter().enumerate() {
            if loss <= EPS_LOSS {
                return Err(Error::DegenerateLoss { task, loss });
            }
        }
        Ok(LookaheadContext {
            model,
            batch,
            opt,
            shared: &params.shared,
            updated_task_params,
            layout: params.layout.clone(),
            base_losses,
        })
    }

    pub fn base_losses(&self) -> &[f64] {
        &self.base_losses
    }

    /// Per-task losses at the simulated post-step parameters.
    pub fn lookahead_losses(&self, candidate: &[f64]) -> Result<Vec<f64>> {
        let stepped = self.opt.simulate_shared_update(self.shared, candidate)?;
        let probe = ParamSet {
            shared: stepped,
            tasks: self.updated_task_params.to_vec(),
            layout: self.layout.clone(),
        };
        self.model.forward_losses(&probe, self.batch)
    }

    /// Per-target transference of one candidate.
    pub fn transference(&self, candidate: &[f64]) -> Result<Vec<f64>> {
        let lookahead = self.lookahead_losses(candidate)?;
        Ok(lookahead
            .iter()
            .zip(&self.base_losses)
            .map(|(la, base)| 1.0 - la / base)
            .collect())
    }

    /// Total transference of one candidate: the sum over targets.
    pub fn total(&self, candidate: &[f64]) -> Result<f64> {
        Ok(self.transference(candidate)?.iter().sum())
    }
}

/// Exact per-target transference of a candidate gradient: simulates the full
/// optimizer update on the shared parameters, evaluates every task's loss at
/// the updated shared block and the supplied post-step task blocks, and
/// returns `1 - lookahead / baseline` per target. Baselines come from the
/// pre-step `params`.
pub fn transference_exact(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    opt: &OptimizerState,
    candidate: &[f64],
    updated_task_params: &[Vec<f64>],
) -> Result<Vec<f64>> {
    LookaheadContext::new(model, params, batch, opt, updated_task_params)?.transference(candidate)
}

/// Total transference per candidate, all candidates sharing one baseline and
/// one forward pass each.
pub fn total_transference(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    opt: &OptimizerState,
    candidates: &[Vec<f64>],
    updated_task_params: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let ctx = LookaheadContext::new(model, params, batch, opt, updated_task_params)?;
    candidates.iter().map(|c| ctx.total(c)).collect()
}

/// First-order approximation: entry `(source i, target j)` is
/// `<grad L_j, grad L_i> / L_j`. Learning-rate free; multiply by eta before
/// comparing against exact values.
pub fn transference_first_order(shared_grads: &[Vec<f64>], losses: &[f64]) -> Result<SquareMatrix> {
    let m = shared_grads.len();
    if losses.len() != m {
        return Err(Error::Shape("gradient and loss counts differ".into()));
    }
    check_losses(losses)?;
    Ok(SquareMatrix::from_fn(m, |i, j| {
        linalg::dot(&shared_grads[j], &shared_grads[i]) / losses[j]
    }))
}

/// The two eta-free terms of the second-order approximation. Entry
/// `(i, j)` of the approximation at learning rate eta is
/// `eta * linear[i][j] - eta^2 * quadratic[i][j]`.
#[derive(Debug, Clone)]
pub struct SecondOrderTerms {
    pub linear: SquareMatrix,
    pub quadratic: SquareMatrix,
}

impl SecondOrderTerms {
    /// Approximation with both terms at unit learning rate.
    pub fn at_unit_rate(&self) -> SquareMatrix {
        self.scaled(1.0)
    }

    /// Approximation scaled for a concrete learning rate.
    pub fn scaled(&self, eta: f64) -> SquareMatrix {
        SquareMatrix::from_fn(self.linear.size(), |i, j| {
            eta * self.linear.get(i, j) - eta * eta * self.quadratic.get(i, j)
        })
    }
}

/// Second-order approximation: entry `(i, j)` combines the projected
/// gradient with a curvature penalty,
/// `(<grad L_j, g_i> - 1/2 g_i' H_j g_i) / L_j`,
/// where `H_j` is the target's shared-parameter Hessian (finite-difference
/// Hessian-vector products). Returned as separate terms so callers can apply
/// their own eta scaling.
pub fn transference_second_order(
    model: &dyn MultiTaskModel,
    params: &ParamSet,
    batch: &Batch,
    shared_grads: &[Vec<f64>],
    losses: &[f64],
) -> Result<SecondOrderTerms> {
    let m = shared_grads.len();
    if losses.len() != m || m != model.num_tasks() {
        return Err(Error::Shape("gradient, loss, and task counts differ".into()));
    }
    check_losses(losses)?;
    let linear = transference_first_order(shared_grads, losses)?;
    let mut quadratic = SquareMatrix::zeros(m);
    for source in 0..m {
        // One direction probe serves all targets.
        let hvs = hessian_vector_products(model, params, batch, &shared_grads[source], None)?;
        for (target, hv) in hvs.iter().enumerate() {
            let penalty = 0.5 * linalg::dot(&shared_grads[source], hv) / losses[target];
            quadratic.set(source, target, penalty);
        }
    }
    Ok(SecondOrderTerms { linear, quadratic })
}

/// Gradient of the log-product loss `log prod_j L_j` with respect to the
/// shared parameters: `sum_j grad L_j / L_j`. Computing this once lets a
/// caller score any number of candidates with one inner product each.
pub fn log_product_direction(shared_grads: &[Vec<f64>], losses: &[f64]) -> Result<Vec<f64>> {
    if shared_grads.len() != losses.len() {
        return Err(Error::Shape("gradient and loss counts differ".into()));
    }
    check_losses(losses)?;
    let dim = shared_grads.first().map_or(0, Vec::len);
    let mut log_grad = vec![0.0; dim];
    for (g, &loss) in shared_grads.iter().zip(losses) {
        if g.len() != dim {
            return Err(Error::Shape("gradient lengths differ".into()));
        }
        linalg::axpy(1.0 / loss, g, &mut log_grad);
    }
    Ok(log_grad)
}

/// Alignment of a candidate with the gradient of the log-product loss:
/// `< sum_j grad L_j / L_j, g >`, which equals the inner product of
/// `grad log prod_j L_j` with the candidate. This is the first-order
/// selection score.
pub fn log_product_alignment(shared_grads: &[Vec<f64>], losses: &[f64], candidate: &[f64]) -> Result<f64> {
    let log_grad = log_product_direction(shared_grads, losses)?;
    if log_grad.len() != candidate.len() {
        return Err(Error::Shape("gradient and candidate lengths differ".into()));
    }
    Ok(linalg::dot(&log_grad, candidate))
}

fn check_losses(losses: &[f64]) -> Result<()> {
    for (task, &loss) in losses.iter().enumerate() {
        if loss <= EPS_LOSS {
            return Err(Error::DegenerateLoss { task, loss });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::quadratic::{dummy_batch, toy_two_well};
    use crate::net::{
        BlockLayout, Layout, OptimizerInit, OptimizerKind, QuadraticModel, QuadraticTask,
        TaskGradient,
    };

    fn sgd(lr: f64, layout: &Layout) -> OptimizerState {
        OptimizerState::new(
            &OptimizerInit { kind: OptimizerKind::Sgd, learning_rate: lr, momentum: 0.0 },
            layout,
        )
        .unwrap()
    }

    fn toy_state() -> (QuadraticModel, ParamSet, Batch) {
        let model = toy_two_well();
        let params = ParamSet { shared: vec![0.5], tasks: vec![vec![], vec![]], layout: model.layout() };
        let batch = dummy_batch(2);
        (model, params, batch)
    }

    #[test]
    fn toy_exact_transference() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let updated = params.tasks.clone();
        let z = transference_exact(&model, &params, &batch, &opt, &[1.0], &updated).unwrap();
        assert!((z[0] - 0.36).abs() < 1e-12, "{}", z[0]);
        assert!((z[1] - (-0.44)).abs() < 1e-12, "{}", z[1]);
    }

    #[test]
    fn zero_candidate_gives_exactly_zero() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let updated = params.tasks.clone();
        let z = transference_exact(&model, &params, &batch, &opt, &[0.0], &updated).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_tasks_transfer_identically() {
        let task = QuadraticTask { matrix: vec![1.0, 0.2, 0.2, 2.0], center: vec![0.3, -0.4] };
        let model = QuadraticModel::new(2, vec![task.clone(), task]).unwrap();
        let params = ParamSet {
            shared: vec![0.9, 0.7],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let opt = sgd(0.05, &params.layout);
        let grads = model.task_gradients(&params, &batch).unwrap();
        let z = transference_exact(&model, &params, &batch, &opt, &grads[0].shared, &params.tasks).unwrap();
        assert!((z[0] - z[1]).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_baseline_names_the_task() {
        let (model, mut params, batch) = toy_state();
        params.shared[0] = 1.0; // task 1 loss becomes exactly 0
        let opt = sgd(0.1, &params.layout);
        let err = transference_exact(&model, &params, &batch, &opt, &[1.0], &params.tasks.clone());
        match err {
            Err(Error::DegenerateLoss { task, .. }) => assert_eq!(task, 1),
            other => panic!("expected degenerate-loss error, got {other:?}"),
        }
    }

    #[test]
    fn first_order_toy_and_orthogonality() {
        let losses = vec![0.25, 0.25];
        let grads = vec![vec![1.0], vec![-1.0]];
        let m = transference_first_order(&grads, &losses).unwrap();
        assert!((m.get(0, 1) - (-4.0)).abs() < 1e-12);
        assert!((m.get(1, 0) - (-4.0)).abs() < 1e-12);
        assert!(m.get(0, 0) >= 0.0 && m.get(1, 1) >= 0.0);

        let ortho = transference_first_order(&vec![vec![1.0, 0.0], vec![0.0, 2.0]], &vec![0.5, 0.5]).unwrap();
        assert_eq!(ortho.get(0, 1), 0.0);
        assert_eq!(ortho.get(1, 0), 0.0);
    }

    #[test]
    fn second_order_terminates_on_the_toy() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let grads_full = model.task_gradients(&params, &batch).unwrap();
        let grads: Vec<Vec<f64>> = grads_full.iter().map(|g| g.shared.clone()).collect();
        let losses = model.forward_losses(&params, &batch).unwrap();
        let terms = transference_second_order(&model, &params, &batch, &grads, &losses).unwrap();
        let approx = terms.scaled(0.1);
        // Hand expansion for source 1 -> target 2: -0.4 - 0.04 = -0.44.
        assert!((approx.get(0, 1) - (-0.44)).abs() < 1e-9, "{}", approx.get(0, 1));
        // Full agreement with the exact values on a pure quadratic.
        for (source, g) in grads.iter().enumerate() {
            let exact = transference_exact(&model, &params, &batch, &opt, g, &params.tasks).unwrap();
            for target in 0..2 {
                assert!(
                    (approx.get(source, target) - exact[target]).abs() <= 1e-8,
                    "source {source} target {target}"
                );
            }
        }
    }

    #[test]
    fn zero_gradient_source_scores_zero_in_both_terms() {
        let (model, params, batch) = toy_state();
        let losses = model.forward_losses(&params, &batch).unwrap();
        let grads = vec![vec![0.0], vec![-1.0]];
        let terms = transference_second_order(&model, &params, &batch, &grads, &losses).unwrap();
        assert_eq!(terms.linear.get(0, 0), 0.0);
        assert_eq!(terms.linear.get(0, 1), 0.0);
        assert_eq!(terms.quadratic.get(0, 0), 0.0);
        assert_eq!(terms.quadratic.get(0, 1), 0.0);
    }

    /// Test-only model with losses affine in the shared parameters, so the
    /// Hessian is identically zero.
    struct AffineLossModel {
        offsets: Vec<f64>,
        slopes: Vec<Vec<f64>>,
    }

    impl MultiTaskModel for AffineLossModel {
        fn num_tasks(&self) -> usize {
            self.slopes.len()
        }
        fn layout(&self) -> Layout {
            Layout {
                shared: BlockLayout::flat(self.slopes[0].len()),
                tasks: vec![BlockLayout::flat(0); self.slopes.len()],
            }
        }
        fn forward_losses(&self, params: &ParamSet, _batch: &Batch) -> Result<Vec<f64>> {
            Ok(self
                .slopes
                .iter()
                .zip(&self.offsets)
                .map(|(w, c)| c + linalg::dot(w, &params.shared))
                .collect())
        }
        fn task_gradients(&self, _params: &ParamSet, _batch: &Batch) -> Result<Vec<TaskGradient>> {
            Ok(self
                .slopes
                .iter()
                .map(|w| TaskGradient { shared: w.clone(), task: vec![] })
                .collect())
        }
    }

    #[test]
    fn zero_hessian_makes_second_order_equal_first_order_exactly() {
        let model = AffineLossModel {
            offsets: vec![2.0, 3.0],
            slopes: vec![vec![0.3, -0.2], vec![0.1, 0.4]],
        };
        let params = ParamSet {
            shared: vec![0.5, -0.5],
            tasks: vec![vec![], vec![]],
            layout: model.layout(),
        };
        let batch = dummy_batch(2);
        let losses = model.forward_losses(&params, &batch).unwrap();
        let grads: Vec<Vec<f64>> = model
            .task_gradients(&params, &batch)
            .unwrap()
            .into_iter()
            .map(|g| g.shared)
            .collect();
        let first = transference_first_order(&grads, &losses).unwrap();
        let terms = transference_second_order(&model, &params, &batch, &grads, &losses).unwrap();
        assert_eq!(terms.at_unit_rate(), first);
    }

    #[test]
    fn total_transference_toy_candidates() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.1, &params.layout);
        let g1 = vec![1.0];
        let g2 = vec![-1.0];
        let combined = vec![0.0];
        let totals =
            total_transference(&model, &params, &batch, &opt, &[g1, g2, combined], &params.tasks).unwrap();
        // Direct lookahead evaluation: theta' = 0.4 gives 0.36 - 0.44, theta' = 0.6
        // mirrors it, and the zero candidate leaves both losses unchanged.
        assert!((totals[0] - (-0.08)).abs() < 1e-12);
        assert!((totals[1] - (-0.08)).abs() < 1e-12);
        assert_eq!(totals[2], 0.0);
        // The combined candidate still carries the highest total.
        assert!(totals[2] > totals[0] && totals[2] > totals[1]);
    }

    #[test]
    fn single_task_total_equals_its_transference() {
        let model = QuadraticModel::new(
            1,
            vec![QuadraticTask { matrix: vec![2.0], center: vec![0.2] }],
        )
        .unwrap();
        let params = ParamSet { shared: vec![1.0], tasks: vec![vec![]], layout: model.layout() };
        let batch = dummy_batch(1);
        let opt = sgd(0.05, &params.layout);
        let g = model.task_gradients(&params, &batch).unwrap()[0].shared.clone();
        let z = transference_exact(&model, &params, &batch, &opt, &g, &params.tasks).unwrap();
        let total = total_transference(&model, &params, &batch, &opt, &[g], &params.tasks).unwrap();
        assert_eq!(total[0], z[0]);
    }

    #[test]
    fn duplicate_tasks_double_the_total() {
        let task = QuadraticTask { matrix: vec![1.5], center: vec![-0.3] };
        let model = QuadraticModel::new(1, vec![task.clone(), task]).unwrap();
        let params = ParamSet { shared: vec![0.4], tasks: vec![vec![], vec![]], layout: model.layout() };
        let batch = dummy_batch(2);
        let opt = sgd(0.02, &params.layout);
        let grads = model.task_gradients(&params, &batch).unwrap();
        let combined = crate::mechanisms::combined(&[grads[0].shared.clone(), grads[1].shared.clone()]);
        let ctx = LookaheadContext::new(&model, &params, &batch, &opt, &params.tasks).unwrap();
        let z = ctx.transference(&combined).unwrap();
        let total = ctx.total(&combined).unwrap();
        assert!((total - 2.0 * z[0]).abs() <= 1e-12);
    }

    #[test]
    fn log_product_alignment_identities() {
        // Single task: plain normalized inner product.
        let g = vec![vec![0.4, -0.2]];
        let losses = vec![0.5];
        let cand = vec![1.0, 2.0];
        let score = log_product_alignment(&g, &losses, &cand).unwrap();
        assert!((score - linalg::dot(&g[0], &cand) / 0.5).abs() < 1e-15);

        // Row-sum identity against the first-order matrix contributions.
        let grads = vec![vec![0.3, 0.1, -0.5], vec![-0.2, 0.8, 0.05], vec![0.9, -0.4, 0.2]];
        let losses = vec![0.7, 1.3, 0.4];
        let cand = vec![0.25, -0.75, 0.5];
        let score = log_product_alignment(&grads, &losses, &cand).unwrap();
        let by_rows: f64 = grads
            .iter()
            .zip(&losses)
            .map(|(g, &l)| linalg::dot(g, &cand) / l)
            .sum();
        assert!((score - by_rows).abs() <= 1e-12);

        // Orthogonal candidate scores zero.
        let grads = vec![vec![1.0, 0.0], vec![2.0, 0.0]];
        let score = log_product_alignment(&grads, &vec![1.0, 1.0], &vec![0.0, 3.0]).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn target_loss_scaling_leaves_incoming_transference_unchanged() {
        // Scaling task 1's loss by c > 0 with the candidate held fixed
        // cancels in the ratio.
        let base = QuadraticModel::new(
            1,
            vec![
                QuadraticTask { matrix: vec![1.0], center: vec![0.0] },
                QuadraticTask { matrix: vec![1.0], center: vec![1.0] },
            ],
        )
        .unwrap();
        for c in [0.5, 3.0, 10.0] {
            let scaled = QuadraticModel::new(
                1,
                vec![
                    QuadraticTask { matrix: vec![1.0], center: vec![0.0] },
                    QuadraticTask { matrix: vec![c], center: vec![1.0] },
                ],
            )
            .unwrap();
            let params =
                ParamSet { shared: vec![0.5], tasks: vec![vec![], vec![]], layout: base.layout() };
            let batch = dummy_batch(2);
            let opt = sgd(0.1, &params.layout);
            let candidate = vec![1.0]; // held fixed across both models
            let z0 = transference_exact(&base, &params, &batch, &opt, &candidate, &params.tasks).unwrap();
            let z1 = transference_exact(&scaled, &params, &batch, &opt, &candidate, &params.tasks).unwrap();
            assert!((z0[1] - z1[1]).abs() <= 1e-12, "c = {c}");
        }
    }

    #[test]
    fn transference_never_exceeds_one() {
        let (model, params, batch) = toy_state();
        let opt = sgd(0.3, &params.layout);
        for g in [vec![5.0], vec![-3.0], vec![0.25]] {
            let z = transference_exact(&model, &params, &batch, &opt, &g, &params.tasks).unwrap();
            assert!(z.iter().all(|&v| v <= 1.0), "{z:?}");
        }
    }
}
