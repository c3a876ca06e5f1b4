//! Flat parameter storage with structural layout metadata.
//!
//! All engine math runs over flat `f64` vectors: one block of shared trunk
//! parameters plus one block per task head. `Layout` records how a flat
//! block maps onto dense layers so checkpoints and views can round-trip
//! without loss.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;

/// Shape of one dense layer inside a flat block: `out_dim x in_dim` weights
/// (row-major) followed by `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

/// Layout of one flat parameter block. `Flat` blocks carry no layer
/// structure (quadratic task suites store a bare parameter vector).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockLayout {
    Layered { layers: Vec<LayerShape> },
    Flat { len: usize },
}

impl BlockLayout {
    pub fn layered(layers: Vec<LayerShape>) -> Self {
        BlockLayout::Layered { layers }
    }

    pub fn flat(len: usize) -> Self {
        BlockLayout::Flat { len }
    }

    pub fn len(&self) -> usize {
        match self {
            BlockLayout::Layered { layers } => layers.iter().map(LayerShape::len).sum(),
            BlockLayout::Flat { len } => *len,
        }
    }

    pub fn layers(&self) -> &[LayerShape] {
        match self {
            BlockLayout::Layered { layers } => layers,
            BlockLayout::Flat { .. } => &[],
        }
    }
}

/// Owned view of one dense layer's parameters, produced by [`unflatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub shape: LayerShape,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Splits a flat block into per-layer views. Inverse of [`flatten`].
pub fn unflatten(block: &BlockLayout, flat: &[f64]) -> Result<Vec<LayerParams>> {
    if flat.len() != block.len() {
        return Err(Error::Shape(format!(
            "block expects {} parameters, got {}",
            block.len(),
            flat.len()
        )));
    }
    let mut out = Vec::new();
    let mut off = 0;
    for &shape in block.layers() {
        let w_len = shape.out_dim * shape.in_dim;
        let weights = flat[off..off + w_len].to_vec();
        off += w_len;
        let bias = flat[off..off + shape.out_dim].to_vec();
        off += shape.out_dim;
        out.push(LayerParams { shape, weights, bias });
    }
    Ok(out)
}

/// Concatenates per-layer views back into a flat block, exactly.
pub fn flatten(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.bias);
    }
    out
}

/// Layout of a full parameter set: shared trunk plus one block per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub shared: BlockLayout,
    pub tasks: Vec<BlockLayout>,
}

impl Layout {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Partitioned model parameters: the shared trunk block plus one flat block
/// per task head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub shared: Vec<f64>,
    pub tasks: Vec<Vec<f64>>,
    pub layout: Layout,
}

impl ParamSet {
    /// All-zero parameters for the given layout.
    pub fn zeros(layout: Layout) -> Self {
        let shared = vec![0.0; layout.shared.len()];
        let tasks = layout.tasks.iter().map(|b| vec![0.0; b.len()]).collect();
        ParamSet { shared, tasks, layout }
    }

    /// Seeded uniform fan-in initialization: every weight and bias of a
    /// layer draws from `U(-1/sqrt(in_dim), 1/sqrt(in_dim))`. Flat blocks
    /// draw from `U(-1, 1)`. Deterministic for a fixed seed.
    pub fn init_uniform(layout: Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = init_block(&layout.shared, &mut rng);
        let tasks = layout.tasks.iter().map(|b| init_block(b, &mut rng)).collect();
        ParamSet { shared, tasks, layout }
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Checks every stored value is finite.
    pub fn check_finite(&self) -> Result<()> {
        if !self.shared.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("shared parameters".into()));
        }
        for (i, block) in self.tasks.iter().enumerate() {
            if !block.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("task {i} parameters")));
            }
        }
        Ok(())
    }

    /// Writes the checkpoint pair: `<stem>.bin` holds all parameters as
    /// little-endian f64 (shared block first, then each task block), and
    /// `<stem>.json` is the sidecar describing the layout.
    pub fn save(&self, bin_path: &Path, sidecar_path: &Path, config_sha256: Option<&str>) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * (self.shared.len() + self.tasks.iter().map(Vec::len).sum::<usize>()));
        for v in self.shared.iter().chain(self.tasks.iter().flatten()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        io_util::write_atomic(bin_path, &bytes)?;

        let sidecar = CheckpointSidecar {
            layout: self.layout.clone(),
            shared_len: self.shared.len(),
            task_lens: self.tasks.iter().map(Vec::len).collect(),
            config_sha256: config_sha256.map(str::to_owned),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Config(format!("sidecar serialization failed: {e}")))?;
        io_util::write_atomic(sidecar_path, json.as_bytes())
    }

    /// Loads a checkpoint pair written by [`ParamSet::save`].
    pub fn load(bin_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let json = io_util::read_to_string(sidecar_path)?;
        let sidecar: CheckpointSidecar =
            serde_json::from_str(&json).map_err(|e| Error::parse(sidecar_path, e.to_string()))?;
        let bytes = io_util::read_bytes(bin_path)?;
        let total = sidecar.shared_len + sidecar.task_lens.iter().sum::<usize>();
        if bytes.len() != total * 8 {
            return Err(Error::parse(
                bin_path,
                format!("expected {} bytes, found {}", total * 8, bytes.len()),
            ));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let shared: Vec<f64> = values.by_ref().take(sidecar.shared_len).collect();
        let mut tasks = Vec::with_capacity(sidecar.task_lens.len());
        for &len in &sidecar.task_lens {
            tasks.push(values.by_ref().take(len).collect());
        }
        Ok(ParamSet { shared, tasks, layout: sidecar.layout })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    layout: Layout,
    shared_len: usize,
    task_lens: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_sha256: Option<String>,
}

fn init_block(block: &BlockLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match block {
        BlockLayout::Layered { layers } => {
            let mut out = Vec::with_capacity(block.len());
            for shape in layers {
                let bound = 1.0 / (shape.in_dim.max(1) as f64).sqrt();
                for _ in 0..shape.len() {
                    out.push(rng.gen_range(-bound..bound));
                }
            }
            out
        }
        BlockLayout::Flat { len } => (0..*len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}
