//! The N x D real matrix every stage after ingestion works on.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    UnitRange,
    Standardized,
}

/// N samples (rows) by D dimensions (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    values: Array2<f64>,
    normalization: Normalization,
}

impl SignalMatrix {
    pub fn new(values: Array2<f64>, normalization: Normalization) -> Result<Self> {
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Range(format!("non-finite entry {v} at ({r}, {c})")));
        }
        if normalization == Normalization::UnitRange {
            if let Some(((r, c), v)) = values
                .indexed_iter()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::Range(format!(
                    "unit-range signal has entry {v} at ({r}, {c})"
                )));
            }
        }
        Ok(Self {
            values,
            normalization,
        })
    }

    pub fn raw(values: Array2<f64>) -> Result<Self> {
        Self::new(values, Normalization::Raw)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
            normalization: self.normalization,
        }
    }

    /// Columns selected by `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(1), indices),
            normalization: self.normalization,
        }
    }
}

/// Per-dimension min-max scaling fitted on one split and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(signals: &SignalMatrix) -> Result<Self> {
        if signals.n_samples() == 0 {
            return Err(invalid("cannot fit a scaler on zero samples"));
        }
        let v = signals.values();
        let min = v
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let max = v
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self { min, max })
    }

    /// Maps each column to [0, 1]. Values outside the fitted range are
    /// clipped; a zero-range column maps to 0.5 everywhere.
    pub fn transform(&self, signals: &SignalMatrix) -> Result<SignalMatrix> {
        if signals.n_dims() != self.min.len() {
            return Err(shape(format!(
                "scaler fitted on {} dims, signals have {}",
                self.min.len(),
                signals.n_dims()
            )));
        }
        let mut out = signals.values().clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let range = hi - lo;
            if range > 0.0 {
                col.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
            } else {
                col.fill(0.5);
            }
        }
        SignalMatrix::new(out, Normalization::UnitRange)
    }
}

/// Fits min-max scaling on `signals` and applies it.
pub fn unit_range(signals: &SignalMatrix) -> Result<(SignalMatrix, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(signals)?;
    let out = scaler.transform(signals)?;
    Ok((out, scaler))
}

/// Zero-mean, unit-variance columns; zero-variance columns become all zero.
pub fn standardize(signals: &SignalMatrix) -> Result<SignalMatrix> {
    let v = signals.values();
    let n = v.nrows().max(1) as f64;
    let mean: Array1<f64> = v.sum_axis(Axis(0)) / n;
    let mut out = v - &mean;
    for mut col in out.axis_iter_mut(Axis(1)) {
        let sd = (col.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|x| x / sd);
        }
    }
    SignalMatrix::new(out, Normalization::Standardized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_column_maps_to_half() {
        let s = SignalMatrix::raw(array![[1.0, 3.0], [1.0, 5.0]]).unwrap();
        let (u, _) = unit_range(&s).unwrap();
        assert_eq!(u.values(), &array![[0.5, 0.0], [0.5, 1.0]]);
        assert_eq!(u.normalization(), Normalization::UnitRange);
    }

    #[test]
    fn transform_clips_out_of_range_rows() {
        let train = SignalMatrix::raw(array![[0.0], [2.0]]).unwrap();
        let scaler = MinMaxScaler::fit(&train).unwrap();
        let test = SignalMatrix::raw(array![[-1.0], [1.0], [4.0]]).unwrap();
        let t = scaler.transform(&test).unwrap();
        assert_eq!(t.values(), &array![[0.0], [0.5], [1.0]]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(SignalMatrix::raw(array![[f64::NAN]]).is_err());
        assert!(SignalMatrix::new(array![[1.5]], Normalization::UnitRange).is_err());
    }
}
