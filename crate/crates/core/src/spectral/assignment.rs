use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A partition of D dimensions into M nonempty clusters, labelled so that
/// clusters appear in order of their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    m: usize,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Canonicalizes `labels`. Fails if any label in `0..m` is unused or
    /// any label is `>= m`.
    pub fn from_labels(labels: &[usize], m: usize) -> Result<Self> {
        if let Some(l) = labels.iter().find(|&&l| l >= m) {
            return Err(invalid(format!("label {l} outside 0..{m}")));
        }
        let canon = canonical_labels(labels);
        let used = canon.iter().copied().max().map_or(0, |x| x + 1);
        if used != m {
            return Err(invalid(format!("{} of {m} clusters are empty", m - used)));
        }
        let mut sizes = vec![0; m];
        canon.iter().for_each(|&l| sizes[l] += 1);
        Ok(Self {
            labels: canon,
            m,
            sizes,
        })
    }

    /// Contiguous blocks of equal size: dims `c*size .. (c+1)*size` form
    /// cluster `c`.
    pub fn contiguous(m: usize, size: usize) -> Self {
        Self {
            labels: (0..m * size).map(|i| i / size).collect(),
            m,
            sizes: vec![size; m],
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_dims(&self) -> usize {
        self.labels.len()
    }

    /// Member dimensions of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.m];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// True if both describe the same set partition.
    pub fn same_partition(&self, other: &Self) -> bool {
        self.labels == other.labels
    }

    /// The partition after moving dimension `i` to `mapping[i]`.
    pub fn permuted(&self, mapping: &[usize]) -> Result<Self> {
        if mapping.len() != self.labels.len() {
            return Err(invalid("permutation length differs from assignment size"));
        }
        let mut labels = vec![0; self.labels.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            labels[mapping[i]] = l;
        }
        Self::from_labels(&labels, self.m)
    }
}

/// Relabels by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_relabel_and_errors() {
        let a = ClusterAssignment::from_labels(&[2, 2, 0, 1, 0], 3).unwrap();
        assert_eq!(a.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(a.sizes(), &[2, 2, 1]);
        assert!(ClusterAssignment::from_labels(&[0, 0], 2).is_err());
        assert!(ClusterAssignment::from_labels(&[0, 3], 2).is_err());
        let b = ClusterAssignment::from_labels(&[1, 1, 0, 2, 0], 3).unwrap();
        assert!(a.same_partition(&b));
    }
}
