//! Dense multi-task network: shared trunk, per-task heads.
//!
//! Structure lives here; values live in [`ParamSet`]. Per-task losses are
//! reduced by mean over the batch, so loss scale does not depend on batch
//! size. Cross-entropy is computed over a numerically stable log-softmax of
//! the task head's raw outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::params::{BlockLayout, LayerShape, Layout, ParamSet};
use crate::net::{Batch, MultiTaskModel, TaskGradient, TaskLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Head layers on top of the shared representation. An empty head reads
    /// the shared representation out directly.
    #[serde(default)]
    pub head: Vec<LayerSpec>,
    pub loss: LossKind,
    /// Loss weight; multiplies the task loss and its gradients.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub trunk: Vec<LayerSpec>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Copy)]
struct LayerMeta {
    shape: LayerShape,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

/// A dense multi-task network built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct DenseNet {
    spec: ModelSpec,
    trunk: Vec<LayerMeta>,
    heads: Vec<Vec<LayerMeta>>,
    rep_dim: usize,
    out_dims: Vec<usize>,
}

impl DenseNet {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if spec.tasks.is_empty() {
            return Err(Error::Config("a model needs at least one task".into()));
        }
        for layer in spec.trunk.iter().chain(spec.tasks.iter().flat_map(|t| t.head.iter())) {
            if layer.width == 0 {
                return Err(Error::Config("layer width must be >= 1".into()));
            }
        }
        let (trunk, rep_dim) = build_block(spec.input_dim, &spec.trunk);
        let mut heads = Vec::with_capacity(spec.tasks.len());
        let mut out_dims = Vec::with_capacity(spec.tasks.len());
        for (i, task) in spec.tasks.iter().enumerate() {
            if !(task.weight.is_finite() && task.weight > 0.0) {
                return Err(Error::Config(format!("task {i} loss weight must be finite and > 0")));
            }
            let (head, out_dim) = build_block(rep_dim, &task.head);
            if task.loss == LossKind::CrossEntropy && out_dim < 2 {
                return Err(Error::Config(format!(
                    "task {i} uses cross-entropy but its output width is {out_dim}; need >= 2 classes"
                )));
            }
            heads.push(head);
            out_dims.push(out_dim);
        }
        Ok(DenseNet { spec, trunk, heads, rep_dim, out_dims })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim
    }

    /// Output width of each task head.
    pub fn out_dims(&self) -> &[usize] {
        &self.out_dims
    }

    /// Raw head outputs per task (logits or predictions), row-major
    /// `batch_size x out_dim`. Used for evaluation and reporting.
    pub fn forward_outputs(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        self.check_compat(params, batch)?;
        let trunk_acts = run_block(&self.trunk, "trunk", &params.shared, &batch.inputs, batch.batch_size)?;
        let rep = trunk_acts.last().unwrap();
        let mut outputs = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let head_acts = run_block(head, &format!("task {i} head"), &params.tasks[i], rep, batch.batch_size)?;
            outputs.push(head_acts.last().unwrap().clone());
        }
        Ok(outputs)
    }

    fn check_compat(&self, params: &ParamSet, batch: &Batch) -> Result<()> {
        batch.validate()?;
        if batch.input_dim != self.spec.input_dim {
            return Err(Error::Config(format!(
                "batch input_dim {} does not match model input_dim {}",
                batch.input_dim, self.spec.input_dim
            )));
        }
        if batch.labels.len() != self.spec.tasks.len() {
            return Err(Error::Config(format!(
                "batch carries {} label sets, model has {} tasks",
                batch.labels.len(),
                self.spec.tasks.len()
            )));
        }
        if params.shared.len() != block_len(&self.trunk) {
            return Err(Error::Shape(format!(
                "shared block has {} parameters, trunk expects {}",
                params.shared.len(),
                block_len(&self.trunk)
            )));
        }
        if params.tasks.len() != self.heads.len() {
            return Err(Error::Shape("parameter set task count differs from model".into()));
        }
        for (i, head) in self.heads.iter().enumerate() {
            if params.tasks[i].len() != block_len(head) {
                return Err(Error::Shape(format!(
                    "task {i} block has {} parameters, head expects {}",
                    params.tasks[i].len(),
                    block_len(head)
                )));
            }
        }
        for (i, (task, labels)) in self.spec.tasks.iter().zip(&batch.labels).enumerate() {
            match (task.loss, labels) {
                (LossKind::CrossEntropy, TaskLabels::Class(idx)) => {
                    let classes = self.out_dims[i];
                    if idx.iter().any(|&c| c as usize >= classes) {
                        return Err(Error::Config(format!(
                            "task {i} has a class label out of range (classes = {classes})"
                        )));
                    }
                }
                (LossKind::Mse, TaskLabels::Real { dim, .. }) => {
                    if *dim != self.out_dims[i] {
                        return Err(Error::Config(format!(
                            "task {i} targets have dim {dim}, head outputs {}",
                            self.out_dims[i]
                        )));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "task {i} label kind does not match its loss kind"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loss and output-gradient for one task given its head output.
    fn loss_and_output_grad(
        &self,
        task: usize,
        output: &[f64],
        labels: &TaskLabels,
        batch_size: usize,
    ) -> (f64, Vec<f64>) {
        let spec = &self.spec.tasks[task];
        let dim = self.out_dims[task];
        match (spec.loss, labels) {
            (LossKind::CrossEntropy, TaskLabels::Class(idx)) => {
                let mut loss = 0.0;
                let mut grad = vec![0.0; output.len()];
                let scale = spec.weight / batch_size as f64;
                for (ex, &label) in idx.iter().enumerate() {
                    let row = &output[ex * dim..(ex + 1) * dim];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
                    let log_sum = max + sum_exp.ln();
                    loss += log_sum - row[label as usize];
                    let g = &mut grad[ex * dim..(ex + 1) * dim];
                    for (k, &z) in row.iter().enumerate() {
                        g[k] = scale * ((z - log_sum).exp() - if k == label as usize { 1.0 } else { 0.0 });
                    }
                }
                (spec.weight * loss / batch_size as f64, grad)
            }
            (LossKind::Mse, TaskLabels::Real { values, .. }) => {
                let scale = spec.weight / (batch_size * dim) as f64;
                let mut loss = 0.0;
                let mut grad = vec![0.0; output.len()];
                for (g, (&o, &y)) in grad.iter_mut().zip(output.iter().zip(values)) {
                    let r = o - y;
                    loss += r * r;
                    *g = 2.0 * scale * r;
                }
                (scale * loss, grad)
            }
            _ => unreachable!("label kinds validated in check_compat"),
        }
    }
}

impl MultiTaskModel for DenseNet {
    fn num_tasks(&self) -> usize {
        self.spec.tasks.len()
    }

    fn layout(&self) -> Layout {
        Layout {
            shared: BlockLayout::layered(self.trunk.iter().map(|l| l.shape).collect()),
            tasks: self
                .heads
                .iter()
                .map(|h| BlockLayout::layered(h.iter().map(|l| l.shape).collect()))
                .collect(),
        }
    }

    fn forward_losses(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<f64>> {
        self.check_compat(params, batch)?;
        let trunk_acts = run_block(&self.trunk, "trunk", &params.shared, &batch.inputs, batch.batch_size)?;
        let rep = trunk_acts.last().unwrap();
        let mut losses = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let acts = run_block(head, &format!("task {i} head"), &params.tasks[i], rep, batch.batch_size)?;
            let (loss, _) = self.loss_and_output_grad(i, acts.last().unwrap(), &batch.labels[i], batch.batch_size);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("task {i} loss")));
            }
            losses.push(loss);
        }
        Ok(losses)
    }

    fn task_gradients(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<TaskGradient>> {
        self.check_compat(params, batch)?;
        let trunk_acts = run_block(&self.trunk, "trunk", &params.shared, &batch.inputs, batch.batch_size)?;
        let rep = trunk_acts.last().unwrap();
        let mut out = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let head_acts = run_block(head, &format!("task {i} head"), &params.tasks[i], rep, batch.batch_size)?;
            let (loss, out_grad) =
                self.loss_and_output_grad(i, head_acts.last().unwrap(), &batch.labels[i], batch.batch_size);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("task {i} loss")));
            }
            // Backprop through the head to its own parameters and to the
            // shared representation, then through the trunk.
            let mut task_grad = vec![0.0; params.tasks[i].len()];
            let rep_grad = backprop_block(head, &params.tasks[i], &head_acts, out_grad, &mut task_grad, batch.batch_size);
            let mut shared_grad = vec![0.0; params.shared.len()];
            backprop_block(&self.trunk, &params.shared, &trunk_acts, rep_grad, &mut shared_grad, batch.batch_size);
            out.push(TaskGradient { shared: shared_grad, task: task_grad });
        }
        Ok(out)
    }
}

fn build_block(input_dim: usize, layers: &[LayerSpec]) -> (Vec<LayerMeta>, usize) {
    let mut metas = Vec::with_capacity(layers.len());
    let mut in_dim = input_dim;
    let mut off = 0;
    for layer in layers {
        let shape = LayerShape { in_dim, out_dim: layer.width };
        metas.push(LayerMeta { shape, act: layer.act, w_off: off, b_off: off + shape.out_dim * shape.in_dim });
        off += shape.len();
        in_dim = layer.width;
    }
    (metas, in_dim)
}

fn block_len(block: &[LayerMeta]) -> usize {
    block.iter().map(|l| l.shape.len()).sum()
}

/// Runs a block forward. Returns all activations: index 0 is the block
/// input, index `l + 1` the output of layer `l`.
fn run_block(
    block: &[LayerMeta],
    scope: &str,
    flat: &[f64],
    input: &[f64],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(block.len() + 1);
    acts.push(input.to_vec());
    for (l, meta) in block.iter().enumerate() {
        let prev = acts.last().unwrap();
        let LayerShape { in_dim, out_dim } = meta.shape;
        let weights = &flat[meta.w_off..meta.w_off + out_dim * in_dim];
        let bias = &flat[meta.b_off..meta.b_off + out_dim];
        let mut next = vec![0.0; batch_size * out_dim];
        for ex in 0..batch_size {
            let x = &prev[ex * in_dim..(ex + 1) * in_dim];
            let row = &mut next[ex * out_dim..(ex + 1) * out_dim];
            for (o, r) in row.iter_mut().enumerate() {
                let w = &weights[o * in_dim..(o + 1) * in_dim];
                let mut z = bias[o];
                for (wk, xk) in w.iter().zip(x) {
                    z += wk * xk;
                }
                *r = meta.act.apply(z);
            }
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteActivation { scope: scope.to_string(), layer: l });
        }
        acts.push(next);
    }
    Ok(acts)
}

/// Backprop through a block given the gradient at its output. Accumulates
/// parameter gradients into `flat_grad` and returns the gradient at the
/// block input.
fn backprop_block(
    block: &[LayerMeta],
    flat: &[f64],
    acts: &[Vec<f64>],
    output_grad: Vec<f64>,
    flat_grad: &mut [f64],
    batch_size: usize,
) -> Vec<f64> {
    let mut delta = output_grad;
    for (l, meta) in block.iter().enumerate().rev() {
        let LayerShape { in_dim, out_dim } = meta.shape;
        let layer_out = &acts[l + 1];
        let layer_in = &acts[l];
        // Chain through the activation.
        for (d, &a) in delta.iter_mut().zip(layer_out.iter()) {
            *d *= meta.act.derivative_from_output(a);
        }
        let weights = &flat[meta.w_off..meta.w_off + out_dim * in_dim];
        let (w_grad, rest) = flat_grad[meta.w_off..].split_at_mut(out_dim * in_dim);
        let b_grad = &mut rest[..out_dim];
        let mut prev_delta = vec![0.0; batch_size * in_dim];
        for ex in 0..batch_size {
            let d = &delta[ex * out_dim..(ex + 1) * out_dim];
            let x = &layer_in[ex * in_dim..(ex + 1) * in_dim];
            let pd = &mut prev_delta[ex * in_dim..(ex + 1) * in_dim];
            for (o, &dz) in d.iter().enumerate() {
                b_grad[o] += dz;
                let w = &weights[o * in_dim..(o + 1) * in_dim];
                let wg = &mut w_grad[o * in_dim..(o + 1) * in_dim];
                for k in 0..in_dim {
                    wg[k] += dz * x[k];
                    pd[k] += dz * w[k];
                }
            }
        }
        delta = prev_delta;
    }
    delta
}
