//! Multinomial logistic regression on frozen representations.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// L2 penalty `lambda/2 * ||W||^2` on the weights (not the bias).
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once the gradient's Euclidean norm falls below this, or when
    /// a step no longer lowers the loss beyond round-off.
    pub tolerance: f64,
    /// z-score features with training-set statistics before fitting.
    pub standardize: bool,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_iterations: 500,
            tolerance: 1e-6,
            standardize: false,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// classes x features
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Feature (mean, std) when standardization is on.
    pub scaling: Option<(Array1<f64>, Array1<f64>)>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl ProbeModel {
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let x = match &self.scaling {
            Some((mu, sd)) => (x - mu) / sd,
            None => x.clone(),
        };
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Argmax class per row, ties to the lowest index.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

struct Objective<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    classes: usize,
    lambda: f64,
}

impl Objective<'_> {
    fn dims(&self) -> usize {
        self.classes * (self.x.ncols() + 1)
    }

    fn split(&self, theta: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let d = self.x.ncols();
        let w = Array2::from_shape_vec((self.classes, d), theta[..self.classes * d].to_vec()).unwrap();
        let b = Array1::from(theta[self.classes * d..].to_vec());
        (w, b)
    }

    /// Mean cross-entropy plus penalty, and its gradient.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = self.split(theta);
        let n = self.x.nrows() as f64;
        let mut p = self.x.dot(&w.t()) + &b;
        let mut loss = 0.0;
        for (mut row, &label) in p.rows_mut().into_iter().zip(self.y) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            row.mapv_inplace(|v| (v - lse).exp());
            row[label] -= 1.0;
        }
        loss = loss / n + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        let gw = p.t().dot(self.x) / n + &w * self.lambda;
        let gb = p.sum_axis(Axis(0)) / n;
        let mut g = gw.into_raw_vec_and_offset().0;
        g.extend(gb.iter());
        (loss, g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with a backtracking Armijo line search. Returns
/// (parameters, iterations, final gradient norm).
fn lbfgs(obj: &Objective<'_>, config: &ProbeConfig) -> (Vec<f64>, usize, f64) {
    let n = obj.dims();
    let mut theta = vec![0.0; n];
    let (mut f, mut g) = obj.eval(&theta);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < config.tolerance {
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let a = dot(s, &q) / dot(y, s);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), a) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = dot(y, &q) / dot(y, s);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = if s_hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let (fc, gc) = obj.eval(&cand);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, fc, gc)) = accepted else { break };
        // decrease lost in round-off: further steps cannot make progress
        let stalled = f - fc <= 4.0 * f64::EPSILON * f.abs().max(1.0);
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > config.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        theta = cand;
        f = fc;
        g = gc;
        if stalled {
            break;
        }
    }
    let gnorm = dot(&g, &g).sqrt();
    (theta, iterations, gnorm)
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {l} outside 0..{classes}")));
    }
    Ok(())
}

/// Fits the probe. With `require_all_classes`, a class missing from the
/// training labels is an invalid-split error.
pub fn fit_probe(
    x: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
    require_all_classes: bool,
) -> Result<ProbeModel> {
    if x.nrows() != labels.len() {
        return Err(shape(format!("{} representations, {} labels", x.nrows(), labels.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidSplit("empty training set".into()));
    }
    check_labels(labels, classes)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite representation".into()));
    }
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if let Some(c) = seen.iter().position(|s| !s) {
        if require_all_classes {
            return Err(Error::InvalidSplit(format!("class {c} absent from training labels")));
        }
        log::warn!("class {c} absent from training labels");
    }
    let scaling = config.standardize.then(|| {
        let mu = x.mean_axis(Axis(0)).unwrap();
        let sd = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        (mu, sd)
    });
    let xs = match &scaling {
        Some((mu, sd)) => (x - mu) / sd,
        None => x.clone(),
    };
    let obj = Objective { x: &xs, y: labels, classes, lambda: config.lambda };
    let (theta, iterations, gradient_norm) = lbfgs(&obj, config);
    let (weights, bias) = obj.split(&theta);
    Ok(ProbeModel { weights, bias, scaling, iterations, gradient_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn objective_gradient_matches_differences() {
        let x = array![[0.5, -1.0], [1.5, 0.2], [-0.3, 0.8], [0.0, 0.1]];
        let y = [0, 1, 2, 1];
        let obj = Objective { x: &x, y: &y, classes: 3, lambda: 0.1 };
        let theta: Vec<f64> = (0..obj.dims()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, g) = obj.eval(&theta);
        for k in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[k] += 1e-6;
            m[k] -= 1e-6;
            let num = (obj.eval(&p).0 - obj.eval(&m).0) / 2e-6;
            assert!((num - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn converges_on_separable_blobs() {
        let x = array![[0.0, 0.0], [0.2, 0.1], [3.0, 3.0], [3.1, 2.9]];
        let m = fit_probe(&x, &[0, 0, 1, 1], 2, &ProbeConfig::default(), true).unwrap();
        assert_eq!(m.predict(&x), vec![0, 0, 1, 1]);
        assert!(m.gradient_norm < 1e-6 || m.iterations == 500);
    }

    #[test]
    fn missing_class_is_invalid_split() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            fit_probe(&x, &[0, 0], 2, &ProbeConfig::default(), true),
            Err(Error::InvalidSplit(_))
        ));
        assert!(fit_probe(&x, &[0, 0], 2, &ProbeConfig::default(), false).is_ok());
    }
}
