//! Generic numeric tables (one sample per row) and label columns.

use std::path::Path;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::signal::SignalMatrix;

/// Reads a headerless CSV of numbers into an N x D raw signal matrix.
pub fn load_tabular_csv(path: impl AsRef<Path>) -> Result<SignalMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::MalformedFile {
                path: path.to_path_buf(),
                reason: format!("row {r} has {} fields, expected {}", record.len(), cols.unwrap()),
            });
        }
        for field in record.iter() {
            data.push(field.parse::<f64>().map_err(|e| Error::MalformedFile {
                path: path.to_path_buf(),
                reason: format!("row {r}: '{field}': {e}"),
            })?);
        }
    }
    let cols = cols.unwrap_or(0);
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    SignalMatrix::raw(Array2::from_shape_vec((rows, cols), data).map_err(|e| invalid(e.to_string()))?)
}

/// Reads a one-column CSV of class indices (an optional `label` header is
/// skipped).
pub fn load_labels_csv(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("label")) {
            continue;
        }
        labels.push(line.parse::<usize>().map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!("line {}: '{line}': {e}", i + 1),
        })?);
    }
    Ok(labels)
}

pub fn write_labels_csv(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("label\n");
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
