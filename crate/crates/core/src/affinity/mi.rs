use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::signal::{Normalization, SignalMatrix};

pub const DEFAULT_BINS: usize = 16;

/// Equal-width bin of a value in [0, 1]: `min(floor(v K), K - 1)`.
#[inline]
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(invalid(format!("need at least 2 bins, got {bins}")));
    }
    if bins > u16::MAX as usize {
        return Err(invalid(format!("too many bins: {bins}")));
    }
    Ok(())
}

fn binned(column: ArrayView1<'_, f64>, bins: usize) -> Result<Vec<u16>> {
    column
        .iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok(bin_index(v, bins) as u16)
            } else {
                Err(Error::Range(format!("value {v} outside [0, 1]")))
            }
        })
        .collect()
}

/// Histogram probability mass function of a column with values in [0, 1].
pub fn histogram_pmf(column: ArrayView1<'_, f64>, bins: usize) -> Result<Vec<f64>> {
    check_bins(bins)?;
    if column.is_empty() {
        return Err(invalid("histogram of an empty column"));
    }
    let mut counts = vec![0usize; bins];
    for b in binned(column, bins)? {
        counts[b as usize] += 1;
    }
    let n = column.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Discrete mutual information in bits between two columns binned on the
/// same K equal-width bins.
pub fn mutual_information(
    col_i: ArrayView1<'_, f64>,
    col_j: ArrayView1<'_, f64>,
    bins: usize,
) -> Result<f64> {
    check_bins(bins)?;
    if col_i.len() != col_j.len() {
        return Err(invalid(format!(
            "columns have lengths {} and {}",
            col_i.len(),
            col_j.len()
        )));
    }
    if col_i.is_empty() {
        return Err(invalid("mutual information of empty columns"));
    }
    let bi = binned(col_i, bins)?;
    let bj = binned(col_j, bins)?;
    let n = bi.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut pi = vec![0usize; bins];
    let mut pj = vec![0usize; bins];
    for (&a, &b) in bi.iter().zip(&bj) {
        joint[a as usize * bins + b as usize] += 1;
        pi[a as usize] += 1;
        pj[b as usize] += 1;
    }
    let mut terms = Vec::new();
    for l in 0..bins {
        for k in 0..bins {
            let c = joint[l * bins + k];
            if c == 0 {
                continue;
            }
            let p = c as f64 / n;
            let marg = (pi[l] as f64 / n) * (pj[k] as f64 / n);
            terms.push(p * (p / marg).log2());
        }
    }
    // A fixed summation order makes the value independent of bin labels.
    terms.sort_unstable_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

/// D x D matrix of pairwise mutual information. The diagonal holds each
/// dimension's entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    values: Array2<f64>,
    bins: usize,
}

impl AffinityMatrix {
    /// Wraps a precomputed matrix after checking symmetry and nonnegativity.
    pub fn from_values(values: Array2<f64>, bins: usize) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(invalid(format!("affinity must be square, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..r {
                let v = values[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid(format!("affinity entry ({i}, {j}) = {v}")));
                }
                if (v - values[[j, i]]).abs() > 1e-10 {
                    return Err(invalid(format!("affinity not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { values, bins })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Copy with a zeroed diagonal, the graph used for clustering.
    pub fn without_self_loops(&self) -> Self {
        let mut values = self.values.clone();
        values.diag_mut().fill(0.0);
        Self {
            values,
            bins: self.bins,
        }
    }

    /// Reorders rows and columns: entry `(mapping[i], mapping[j])` of the
    /// result is entry `(i, j)` of `self`.
    pub fn permuted(&self, mapping: &[usize]) -> Result<Self> {
        let d = self.dim();
        if mapping.len() != d {
            return Err(invalid("permutation length differs from affinity size"));
        }
        let mut values = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                values[[mapping[i], mapping[j]]] = self.values[[i, j]];
            }
        }
        Ok(Self {
            values,
            bins: self.bins,
        })
    }
}

/// `sum_c c log2 c` lookup for counts up to `n`.
fn nlog2n_table(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() })
        .collect()
}

/// Mutual information for every pair of dimensions of a unit-range signal
/// matrix. Each unordered pair is computed once and mirrored; pairs are
/// independent, so the result does not depend on the thread count.
pub fn affinity_matrix(signals: &SignalMatrix, bins: usize) -> Result<AffinityMatrix> {
    check_bins(bins)?;
    if signals.normalization() != Normalization::UnitRange {
        return Err(invalid(
            "affinity needs unit-range signals; apply min-max scaling first",
        ));
    }
    let (n, d) = (signals.n_samples(), signals.n_dims());
    if n == 0 {
        return Err(invalid("affinity of zero samples"));
    }
    let columns: Vec<Vec<u16>> = (0..d)
        .map(|j| binned(signals.column(j), bins))
        .collect::<Result<_>>()?;
    let table = nlog2n_table(n);
    let marginal: Vec<f64> = columns
        .iter()
        .map(|col| {
            let mut counts = vec![0usize; bins];
            col.iter().for_each(|&b| counts[b as usize] += 1);
            counts.sort_unstable();
            counts.iter().map(|&c| table[c]).sum()
        })
        .collect();
    let nf = n as f64;
    let log_n = nf.log2();

    // I = log2 N + (1/N) [ sum c_lk log2 c_lk - sum a_l log2 a_l - sum b_k log2 b_k ]
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut joint = vec![0u32; bins * bins];
            let mut nonzero = Vec::with_capacity(bins * bins);
            let ci = &columns[i];
            (i..d)
                .map(|j| {
                    joint.iter_mut().for_each(|c| *c = 0);
                    for (&a, &b) in ci.iter().zip(&columns[j]) {
                        joint[a as usize * bins + b as usize] += 1;
                    }
                    // Summed in count order so that (i, j) and (j, i), or a
                    // relabeling of the bins, agree bitwise.
                    nonzero.clear();
                    nonzero.extend(joint.iter().copied().filter(|&c| c > 0));
                    nonzero.sort_unstable();
                    let joint_term: f64 = nonzero.iter().map(|&c| table[c as usize]).sum();
                    let mi = log_n + (joint_term - (marginal[i] + marginal[j])) / nf;
                    mi.max(0.0)
                })
                .collect()
        })
        .collect();

    let mut values = Array2::<f64>::zeros((d, d));
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            values[[i, i + off]] = v;
            values[[i + off, i]] = v;
        }
    }
    Ok(AffinityMatrix { values, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn pmf_examples() {
        let col = array![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        assert_eq!(histogram_pmf(col.view(), 4).unwrap(), vec![0.25; 4]);
        let half = Array1::from_elem(5, 0.5);
        assert_eq!(histogram_pmf(half.view(), 2).unwrap(), vec![0.0, 1.0]);
        assert!(histogram_pmf(Array1::<f64>::zeros(0).view(), 4).is_err());
        assert!(matches!(
            histogram_pmf(array![1.5].view(), 4),
            Err(Error::Range(_))
        ));
        assert!(histogram_pmf(half.view(), 1).is_err());
    }

    #[test]
    fn mi_of_column_with_itself_is_its_entropy() {
        let col = array![0.1, 0.3, 0.6, 0.9, 0.1, 0.3, 0.6, 0.9];
        let mi = mutual_information(col.view(), col.view(), 4).unwrap();
        assert!((mi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn independent_pattern_has_zero_mi() {
        let a = array![0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9];
        let b = array![0.1, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.9];
        assert_eq!(mutual_information(a.view(), b.view(), 2).unwrap(), 0.0);
        assert!(mutual_information(a.view(), array![0.1].view(), 2).is_err());
    }

    #[test]
    fn fixed_joint_table_matches_direct_sum() {
        // Joint counts over a 4x4 table, realised as a pair of columns.
        let counts = [[3, 1, 0, 2], [0, 4, 1, 1], [2, 0, 5, 0], [1, 1, 0, 3]];
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (l, row) in counts.iter().enumerate() {
            for (k, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    a.push((l as f64 + 0.5) / 4.0);
                    b.push((k as f64 + 0.5) / 4.0);
                }
            }
        }
        let n: f64 = counts.iter().flatten().sum::<i32>() as f64;
        let row_m: Vec<f64> = counts.iter().map(|r| r.iter().sum::<i32>() as f64 / n).collect();
        let col_m: Vec<f64> = (0..4).map(|k| counts.iter().map(|r| r[k]).sum::<i32>() as f64 / n).collect();
        let mut expected = 0.0;
        for l in 0..4 {
            for k in 0..4 {
                let p = counts[l][k] as f64 / n;
                if p > 0.0 {
                    expected += p * (p / (row_m[l] * col_m[k])).log2();
                }
            }
        }
        let got = mutual_information(Array1::from(a).view(), Array1::from(b).view(), 4).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn matrix_diagonal_and_identical_dims() {
        let v = array![[0.1, 0.1, 0.2], [0.4, 0.4, 0.9], [0.6, 0.6, 0.3], [0.9, 0.9, 0.7]];
        let s = SignalMatrix::new(v, Normalization::UnitRange).unwrap();
        let a = affinity_matrix(&s, 4).unwrap();
        let h0 = mutual_information(s.column(0), s.column(0), 4).unwrap();
        assert!((a.values()[[0, 0]] - h0).abs() < 1e-12);
        assert!((a.values()[[0, 1]] - a.values()[[0, 0]]).abs() < 1e-12);
        assert!((a.values()[[0, 1]] - a.values()[[1, 1]]).abs() < 1e-12);
    }

    #[test]
    fn balanced_independent_dimension() {
        // dims 0 and 1 identical, dim 2 balanced against both.
        let v = array![[0.1, 0.1, 0.1], [0.1, 0.1, 0.9], [0.9, 0.9, 0.1], [0.9, 0.9, 0.9]];
        let s = SignalMatrix::new(v, Normalization::UnitRange).unwrap();
        let a = affinity_matrix(&s, 2).unwrap();
        assert_eq!(a.values()[[0, 2]], 0.0);
        assert_eq!(a.values()[[1, 2]], 0.0);
        assert!((a.values()[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raw_signals_are_rejected() {
        let s = SignalMatrix::raw(array![[0.5]]).unwrap();
        assert!(affinity_matrix(&s, 4).is_err());
    }
}
