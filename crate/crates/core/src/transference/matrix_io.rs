//! CSV serialization for transference matrices.
//!
//! Format: header row `source\target,task_0,...`, one row per source task,
//! 17-significant-digit decimals. Run metadata travels in a JSON sidecar
//! next to the CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;
use crate::transference::SquareMatrix;

/// Metadata sidecar written next to each matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    /// "run" or "epoch".
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.push_str(".meta.json");
    csv_path.with_file_name(name)
}

pub fn write_matrix(csv_path: &Path, matrix: &SquareMatrix, meta: Option<&MatrixMeta>) -> Result<()> {
    let m = matrix.size();
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["source\\target".to_string()];
    header.extend((0..m).map(|a| format!("task_{a}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::parse(csv_path, e.to_string()))?;
    for b in 0..m {
        let mut row = vec![format!("task_{b}")];
        row.extend((0..m).map(|a| format!("{:.16e}", matrix.get(b, a))));
        writer
            .write_record(&row)
            .map_err(|e| Error::parse(csv_path, e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::parse(csv_path, e.to_string()))?;
    io_util::write_atomic(csv_path, &bytes)?;

    if let Some(meta) = meta {
        let json = serde_json::to_string_pretty(meta)
            .map_err(|e| Error::Config(format!("matrix metadata serialization failed: {e}")))?;
        io_util::write_atomic(&sidecar_path(csv_path), json.as_bytes())?;
    }
    Ok(())
}

pub fn read_matrix(csv_path: &Path) -> Result<SquareMatrix> {
    let text = io_util::read_to_string(csv_path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(csv_path, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(Error::parse(csv_path, "missing header row"));
    }
    let m = headers.len() - 1;
    if m == 0 {
        return Err(Error::parse(csv_path, "matrix has no task columns"));
    }
    let mut matrix = SquareMatrix::zeros(m);
    let mut rows = 0usize;
    for (b, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(csv_path, e.to_string()))?;
        if record.len() != m + 1 {
            return Err(Error::parse(
                csv_path,
                format!("row {b} has {} fields, expected {}", record.len(), m + 1),
            ));
        }
        if b >= m {
            return Err(Error::parse(csv_path, format!("more than {m} source rows")));
        }
        for a in 0..m {
            let cell = record.get(a + 1).unwrap();
            let value: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::parse(csv_path, format!("bad number '{cell}' at row {b}")))?;
            matrix.set(b, a, value);
        }
        rows += 1;
    }
    if rows != m {
        return Err(Error::parse(csv_path, format!("found {rows} source rows, expected {m}")));
    }
    Ok(matrix)
}

pub fn read_meta(csv_path: &Path) -> Result<Option<MatrixMeta>> {
    let path = sidecar_path(csv_path);
    if !path.exists() {
        return Ok(None);
    }
    let json = io_util::read_to_string(&path)?;
    let meta = serde_json::from_str(&json).map_err(|e| Error::parse(&path, e.to_string()))?;
    Ok(Some(meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trips_through_csv_at_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let matrix = SquareMatrix::from_fn(3, |b, a| {
            (b as f64 + 1.0) / (a as f64 + 7.0) * if (b + a) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let meta = MatrixMeta {
            kind: "run".into(),
            epoch: None,
            seed: 9,
            learning_rate: 0.05,
            steps: 120,
            config_sha256: Some("abc".into()),
        };
        write_matrix(&path, &matrix, Some(&meta)).unwrap();
        let loaded = read_matrix(&path).unwrap();
        assert_eq!(matrix, loaded);
        assert_eq!(read_meta(&path).unwrap().unwrap(), meta);
    }

    #[test]
    fn header_names_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_matrix(&path, &SquareMatrix::zeros(2), None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("source\\target,task_0,task_1"));
    }
}
