//! `.mtds` dataset container.
//!
//! Layout: magic `MTDS`, a little-endian u32 header length, a JSON header
//! (spec, task kinds, split sizes, optional quadratic suite), then the data
//! blocks per split in train/valid/test order: features as little-endian
//! f32, then each task's labels (u16 class indices or f32 targets, as the
//! header declares). Generated values are quantized through f32 before
//! use, so a round trip through the container is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, DatasetSpec, QuadraticSuite, TabularSplit, TaskKind};
use crate::error::{Error, Result};
use crate::io_util;
use crate::net::TaskLabels;

const MAGIC: &[u8; 4] = b"MTDS";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    format_version: u32,
    spec: DatasetSpec,
    input_dim: usize,
    task_kinds: Vec<TaskKind>,
    /// train, valid, test sizes.
    splits: [usize; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    quadratic: Option<QuadraticSuite>,
}

pub fn write(dataset: &Dataset, path: &Path) -> Result<()> {
    let header = ContainerHeader {
        format_version: VERSION,
        spec: dataset.spec.clone(),
        input_dim: dataset.input_dim,
        task_kinds: dataset.task_kinds.clone(),
        splits: [dataset.train.size, dataset.valid.size, dataset.test.size],
        quadratic: dataset.quadratic.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Config(format!("container header serialization failed: {e}")))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for split in [&dataset.train, &dataset.valid, &dataset.test] {
        for &v in &split.features {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for labels in &split.labels {
            match labels {
                TaskLabels::Class(v) => {
                    for &c in v {
                        bytes.extend_from_slice(&c.to_le_bytes());
                    }
                }
                TaskLabels::Real { values, .. } => {
                    for &y in values {
                        bytes.extend_from_slice(&(y as f32).to_le_bytes());
                    }
                }
            }
        }
    }
    io_util::write_atomic(path, &bytes)
}

pub fn read(path: &Path) -> Result<Dataset> {
    let bytes = io_util::read_bytes(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::parse(path, "not an mtds container"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::parse(path, "truncated header"));
    }
    let header: ContainerHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::parse(path, e.to_string()))?;
    if header.format_version != VERSION {
        return Err(Error::parse(path, format!("unsupported version {}", header.format_version)));
    }
    let mut cursor = 8 + header_len;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() < *cursor + n {
            return Err(Error::parse(path, "truncated data block"));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    let mut splits = Vec::with_capacity(3);
    for &n in &header.splits {
        let raw = take(&mut cursor, n * header.input_dim * 4)?;
        let features: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut labels = Vec::with_capacity(header.task_kinds.len());
        for kind in &header.task_kinds {
            match kind {
                TaskKind::Classification { classes } => {
                    let raw = take(&mut cursor, n * 2)?;
                    let v: Vec<u16> = raw
                        .chunks_exact(2)
                        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    if v.iter().any(|&c| c as usize >= *classes) {
                        return Err(Error::parse(path, "class label out of range"));
                    }
                    labels.push(TaskLabels::Class(v));
                }
                TaskKind::Regression { dim } => {
                    let raw = take(&mut cursor, n * dim * 4)?;
                    let values: Vec<f64> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                        .collect();
                    labels.push(TaskLabels::Real { dim: *dim, values });
                }
            }
        }
        splits.push(TabularSplit { size: n, features, labels });
    }
    if cursor != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after data blocks"));
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        spec: header.spec,
        input_dim: header.input_dim,
        task_kinds: header.task_kinds,
        train,
        valid,
        test,
        quadratic: header.quadratic,
    })
}
