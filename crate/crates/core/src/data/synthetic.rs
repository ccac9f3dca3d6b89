//! Small generated datasets with known structure, for tests and examples.

use ndarray::Array2;
use rand::Rng;

use crate::affinity::AffinityMatrix;
use crate::error::{invalid, Result};
use crate::rng::{self, streams};
use crate::signal::{unit_range, SignalMatrix};

/// Block labels `0,0,..,1,1,..` for contiguous blocks of the given sizes.
pub fn block_labels(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect()
}

/// A generator for block-structured signals. Each sample draws `factors`
/// standard-normal global factors `u`; block `b` has latent
/// `z_b = sum_f c_bf u_f` with unit-norm random mixing rows, and dim `j`
/// of block `b` is `a_j z_b + noise * e_j` with a random loading `a_j`.
/// Dimensions in one block share a latent; blocks are related only
/// through the shared factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlockModel {
    pub sizes: Vec<usize>,
    /// blocks x factors
    pub mixing: Array2<f64>,
    pub loadings: Vec<f64>,
    pub noise: f64,
}

impl LatentBlockModel {
    pub fn new(sizes: &[usize], factors: usize, noise: f64, seed: u64) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) || factors == 0 || !(noise >= 0.0) {
            return Err(invalid("need nonempty blocks, at least one factor and nonnegative noise"));
        }
        let mut r = rng::substream(seed, streams::SYNTHETIC, 0);
        let mut mixing = Array2::from_shape_simple_fn((sizes.len(), factors), || rng::normal(&mut r));
        for mut row in mixing.rows_mut() {
            let norm = row.dot(&row).sqrt().max(1e-12);
            row /= norm;
        }
        let loadings = (0..sizes.iter().sum::<usize>())
            .map(|_| {
                let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                sign * (0.5 + r.random::<f64>())
            })
            .collect();
        Ok(Self { sizes: sizes.to_vec(), mixing, loadings, noise })
    }

    /// One factor per block, unmixed.
    pub fn independent(sizes: &[usize], noise: f64, seed: u64) -> Result<Self> {
        let mut m = Self::new(sizes, sizes.len(), noise, seed)?;
        m.mixing = Array2::eye(sizes.len());
        Ok(m)
    }

    pub fn dims(&self) -> usize {
        self.loadings.len()
    }

    pub fn factors(&self) -> usize {
        self.mixing.ncols()
    }

    pub fn dim_labels(&self) -> Vec<usize> {
        block_labels(&self.sizes)
    }

    /// N x factors standard-normal draws.
    pub fn draw_factors(&self, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.factors()), || rng::normal(rng))
    }

    /// Noisy raw signals for the given factors.
    pub fn render(&self, factors: &Array2<f64>, rng: &mut impl Rng) -> Array2<f64> {
        let z = factors.dot(&self.mixing.t());
        let labels = self.dim_labels();
        let mut x = Array2::zeros((factors.nrows(), self.dims()));
        for (mut row, zr) in x.rows_mut().into_iter().zip(z.rows()) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.loadings[j] * zr[labels[j]] + self.noise * rng::normal(rng);
            }
        }
        x
    }
}

/// Class of each sample: the index of its largest factor among the first
/// `classes`, ties to the lowest index.
pub fn factor_labels(factors: &Array2<f64>, classes: usize) -> Vec<usize> {
    let k = classes.clamp(1, factors.ncols().max(1));
    factors
        .rows()
        .into_iter()
        .map(|u| (0..k).fold(0, |best, c| if u[c] > u[best] { c } else { best }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct LatentBlocks {
    pub signals: SignalMatrix,
    /// Block of each dimension.
    pub dim_labels: Vec<usize>,
    /// N x factors
    pub factors: Array2<f64>,
}

/// `n` samples from a [`LatentBlockModel`] with one independent factor per
/// block, min-max scaled to [0, 1].
pub fn latent_block_signals(n: usize, sizes: &[usize], noise: f64, seed: u64) -> Result<LatentBlocks> {
    if n < 2 {
        return Err(invalid("need at least two samples"));
    }
    let model = LatentBlockModel::independent(sizes, noise, seed)?;
    let mut r = rng::substream(seed, streams::SYNTHETIC, 1);
    let factors = model.draw_factors(n, &mut r);
    let x = model.render(&factors, &mut r);
    let (signals, _) = unit_range(&SignalMatrix::raw(x)?)?;
    Ok(LatentBlocks { signals, dim_labels: model.dim_labels(), factors })
}

/// An affinity with planted blocks: `within` inside a block, `across`
/// between blocks, each off-diagonal entry perturbed by up to `jitter`.
/// The diagonal is `within + jitter`, so it dominates every row.
pub fn planted_block_affinity(sizes: &[usize], within: f64, across: f64, jitter: f64, seed: u64) -> Result<AffinityMatrix> {
    if !(within >= 0.0 && across >= 0.0 && jitter >= 0.0 && jitter <= across.max(within)) {
        return Err(invalid("planted affinity needs nonnegative within/across and a small jitter"));
    }
    let labels = block_labels(sizes);
    let d = labels.len();
    let mut r = rng::stream(seed, streams::SYNTHETIC);
    let mut a = Array2::zeros((d, d));
    for i in 0..d {
        a[[i, i]] = within + jitter;
        for j in i + 1..d {
            let base = if labels[i] == labels[j] { within } else { across };
            let v = (base + jitter * (2.0 * r.random::<f64>() - 1.0)).max(0.0);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    AffinityMatrix::from_values(a, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Normalization;

    #[test]
    fn block_signal_shapes() {
        let b = latent_block_signals(50, &[3, 2], 0.1, 1).unwrap();
        assert_eq!(b.signals.values().dim(), (50, 5));
        assert_eq!(b.dim_labels, vec![0, 0, 0, 1, 1]);
        assert_eq!(b.signals.normalization(), Normalization::UnitRange);
        let y = factor_labels(&b.factors, 2);
        assert!(y.contains(&0) && y.contains(&1));
        assert!(y.iter().zip(b.factors.rows()).all(|(&c, z)| z[c] >= z[1 - c]));
    }

    #[test]
    fn shared_factors_tie_blocks_together() {
        let m = LatentBlockModel::new(&[2, 2, 2], 1, 0.0, 4).unwrap();
        let mut r = rng::stream(0, 0);
        let u = m.draw_factors(20, &mut r);
        let x = m.render(&u, &mut r);
        // one factor: every dim is a fixed multiple of it
        for j in 0..m.dims() {
            let ratio = x[[0, j]] / u[[0, 0]];
            assert!(x.column(j).iter().zip(u.column(0)).all(|(a, b)| (a - ratio * b).abs() < 1e-9));
        }
    }

    #[test]
    fn planted_affinity_is_valid() {
        let a = planted_block_affinity(&[4, 4], 1.0, 0.05, 0.01, 3).unwrap();
        assert_eq!(a.dim(), 8);
        assert!(a.values()[[0, 1]] > 0.9 && a.values()[[0, 5]] < 0.1);
    }
}
