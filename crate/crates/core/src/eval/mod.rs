//! Downstream evaluation: linear probing, paired-response decoding and
//! k-fold cross-validation, plus partition agreement scores.

mod probe;

use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

pub use probe::{fit_probe, ProbeConfig, ProbeModel};

use crate::affinity::affinity_matrix;
use crate::error::{invalid, shape, Error, Result};
use crate::model::{encode, train, ModelConfig, TrainConfig, TrainOptions};
use crate::rng::{self, streams};
use crate::signal::{MinMaxScaler, SignalMatrix};
use crate::spectral::{cluster_dimensions, ClusterAssignment, ClusterParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    /// Fraction of test samples predicted correctly.
    pub accuracy: f64,
    /// Per class; `None` for classes with no test samples.
    pub per_class: Vec<Option<f64>>,
    pub folds: Vec<FoldResult>,
    pub n_test: usize,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl EvalReport {
    fn from_predictions(task: &str, predicted: &[usize], truth: &[usize], classes: usize, seed: u64) -> Self {
        let mut hits = vec![0usize; classes];
        let mut counts = vec![0usize; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            counts[t] += 1;
            hits[t] += usize::from(p == t);
        }
        let correct: usize = hits.iter().sum();
        EvalReport {
            task: task.to_string(),
            accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
            per_class: hits
                .iter()
                .zip(&counts)
                .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
                .collect(),
            folds: Vec::new(),
            n_test: truth.len(),
            seed,
            config: serde_json::Value::Null,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        crate::io::write_atomic(path, text.as_bytes())
    }

    /// One row per number: `task,seed,scope,index,value` where scope is
    /// `overall`, `class` or `fold`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "seed", "scope", "index", "accuracy"])?;
        let seed = self.seed.to_string();
        w.write_record([&self.task, &seed, "overall", "", &self.accuracy.to_string()])?;
        for (c, a) in self.per_class.iter().enumerate() {
            let v = a.map_or(String::new(), |a| a.to_string());
            w.write_record([self.task.as_str(), &seed, "class", &c.to_string(), &v])?;
        }
        for f in &self.folds {
            w.write_record([self.task.as_str(), &seed, "fold", &f.fold.to_string(), &f.accuracy.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

/// Fits a probe on the training representations and scores it on the test
/// set. Every class seen in either split must appear in training.
pub fn linear_probe(
    train_reps: &Array2<f64>,
    train_labels: &[usize],
    test_reps: &Array2<f64>,
    test_labels: &[usize],
    config: &ProbeConfig,
) -> Result<EvalReport> {
    if test_reps.nrows() != test_labels.len() {
        return Err(shape(format!("{} test representations, {} labels", test_reps.nrows(), test_labels.len())));
    }
    if train_reps.ncols() != test_reps.ncols() {
        return Err(shape("train and test representation widths differ"));
    }
    let classes = num_classes(train_labels).max(num_classes(test_labels));
    let model = fit_probe(train_reps, train_labels, classes, config, true)?;
    let predicted = model.predict(test_reps);
    let mut report = EvalReport::from_predictions("linear_probe", &predicted, test_labels, classes, 0);
    report.config = serde_json::to_value(config)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Cosine,
    /// Pearson correlation (cosine of mean-centred rows).
    Correlation,
}

fn similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, kind: Similarity) -> f64 {
    let (a, b) = match kind {
        Similarity::Cosine => (a.to_owned(), b.to_owned()),
        Similarity::Correlation => (a.mapv(|v| v - a.mean().unwrap_or(0.0)), b.mapv(|v| v - b.mean().unwrap_or(0.0))),
    };
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Fraction of rows `i` whose most similar row of `second` is row `i`
/// (ties to the lowest index).
pub fn pair_decoding_accuracy(first: &Array2<f64>, second: &Array2<f64>, kind: Similarity) -> Result<f64> {
    if first.nrows() != second.nrows() || first.ncols() != second.ncols() {
        return Err(invalid(format!("representation shapes {:?} and {:?} differ", first.dim(), second.dim())));
    }
    let n = first.nrows();
    if n == 0 {
        return Err(invalid("no stimuli"));
    }
    let mut correct = 0;
    for i in 0..n {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..n {
            let s = similarity(first.row(i), second.row(j), kind);
            if s > best_sim {
                best = j;
                best_sim = s;
            }
        }
        correct += usize::from(best == i);
    }
    Ok(correct as f64 / n as f64)
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first
/// `n % k` folds hold one extra sample.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(invalid(format!("{k} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, streams::FOLDS), &mut order);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = n / k + usize::from(f < n % k);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Learns representations from a training split and applies them to a
/// held-out split.
pub trait RepresentationPipeline {
    fn name(&self) -> String;
    fn fit_transform(&self, train: &SignalMatrix, test: &SignalMatrix, seed: u64) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// The signals themselves.
pub struct RawPipeline;

impl RepresentationPipeline for RawPipeline {
    fn name(&self) -> String {
        "raw".into()
    }
    fn fit_transform(&self, train: &SignalMatrix, test: &SignalMatrix, _seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((train.values().clone(), test.values().clone()))
    }
}

/// Min-max scaling fit on the training split, mutual-information
/// affinity, density-adjusted clustering, then masked-autoencoder
/// pretraining; representations are the pooled encoder outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UrlostPipeline {
    pub bins: usize,
    pub cluster: ClusterParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eccentricity: Option<Vec<f64>>,
    /// Use this partition instead of clustering each fold.
    pub fixed_clusters: Option<ClusterAssignment>,
}

impl Default for UrlostPipeline {
    fn default() -> Self {
        Self {
            bins: crate::affinity::DEFAULT_BINS,
            cluster: ClusterParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eccentricity: None,
            fixed_clusters: None,
        }
    }
}

impl RepresentationPipeline for UrlostPipeline {
    fn name(&self) -> String {
        "urlost".into()
    }
    fn fit_transform(&self, train_set: &SignalMatrix, test: &SignalMatrix, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
        let scaler = MinMaxScaler::fit(train_set)?;
        let tr = scaler.transform(train_set)?;
        let te = scaler.transform(test)?;
        let clusters = match &self.fixed_clusters {
            Some(c) => c.clone(),
            None => {
                let a = affinity_matrix(&tr, self.bins)?;
                let params = ClusterParams { seed, ..self.cluster.clone() };
                let ecc = if params.alpha != 0.0 { self.eccentricity.as_deref() } else { None };
                cluster_dimensions(&a, ecc, &params)?.assignment
            }
        };
        let cfg = TrainConfig { seed, ..self.train.clone() };
        let state = train::<f64>(&tr, &clusters, &self.model, &cfg, TrainOptions::default())?;
        Ok((
            encode(&tr, &clusters, &state.params, &self.model)?,
            encode(&te, &clusters, &state.params, &self.model)?,
        ))
    }
}

/// k-fold cross-validated probe accuracy. Representations are refit on
/// each fold's training part. The overall accuracy pools every sample's
/// held-out prediction.
pub fn kfold_cv(
    signals: &SignalMatrix,
    labels: &[usize],
    k: usize,
    pipeline: &dyn RepresentationPipeline,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<EvalReport> {
    let n = signals.n_samples();
    if labels.len() != n {
        return Err(shape(format!("{n} samples, {} labels", labels.len())));
    }
    let classes = num_classes(labels);
    let folds = kfold_indices(n, k, seed)?;
    let mut predicted = vec![0; n];
    let mut results = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let mut in_test = vec![false; n];
        test_idx.iter().for_each(|&i| in_test[i] = true);
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let (tr, te) = pipeline
            .fit_transform(&signals.select_rows(&train_idx), &signals.select_rows(test_idx), rng::mix(seed, f as u64))?;
        let model = fit_probe(&tr, &train_labels, classes, probe, false)?;
        let pred = model.predict(&te);
        let mut correct = 0;
        for (&i, &p) in test_idx.iter().zip(&pred) {
            predicted[i] = p;
            correct += usize::from(p == labels[i]);
        }
        results.push(FoldResult {
            fold: f,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            accuracy: correct as f64 / test_idx.len() as f64,
        });
    }
    let mut report = EvalReport::from_predictions(&format!("kfold_{}", pipeline.name()), &predicted, labels, classes, seed);
    report.folds = results;
    report.config = serde_json::json!({ "k_folds": k, "probe": probe });
    Ok(report)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("labelings differ in length"));
    }
    let n = a.len();
    let ka = num_classes(a);
    let kb = num_classes(b);
    let mut table = Array2::<f64>::zeros((ka, kb));
    for (&x, &y) in a.iter().zip(b) {
        table[[x, y]] += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = table.sum_axis(Axis(1)).iter().map(|&v| c2(v)).sum();
    let cols: f64 = table.sum_axis(Axis(0)).iter().map(|&v| c2(v)).sum();
    let total = c2(n as f64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }

    #[test]
    fn decoding_identity_and_ties() {
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(pair_decoding_accuracy(&a, &a, Similarity::Cosine).unwrap(), 1.0);
        // Duplicate rows tie; the lower index wins, so row 1 is wrong.
        let d = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(pair_decoding_accuracy(&d, &d, Similarity::Cosine).unwrap(), 0.5);
        assert!(pair_decoding_accuracy(&a, &d, Similarity::Cosine).is_err());
    }

    #[test]
    fn folds_partition() {
        let folds = kfold_indices(10, 3, 4).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(10, 3, 4).unwrap());
        assert!(kfold_indices(3, 4, 0).is_err());
    }

    #[test]
    fn leave_one_out() {
        let folds = kfold_indices(10, 10, 0).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
    }
}
