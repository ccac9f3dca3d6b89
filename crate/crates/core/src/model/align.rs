//! Consistency of the per-cluster projections once the known local
//! permutations are undone.

use ndarray::{Array2, Axis};

use super::params::SelfOrgWeights;
use crate::data::Permutation;
use crate::error::{invalid, Result};
use crate::real::Real;

/// `W_i E_i` in original element order: column `j` is column `perm[j]` of
/// `W_i`, since cluster value `perm[j]` holds original element `j`.
pub fn unpermuted_weights<T: Real>(w: &Array2<T>, perm: &Permutation) -> Array2<f64> {
    w.select(Axis(1), perm.mapping()).mapv(|v| v.f64())
}

/// Mean cosine similarity, over output units and over all cluster pairs,
/// between the unpermuted filters of different clusters. A filter is one
/// row of `W_i E_i` (one output unit's weights over the patch).
pub fn alignment_metric<T: Real>(weights: &SelfOrgWeights<Array2<T>>, perms: &[Permutation]) -> Result<f64> {
    let m = perms.len();
    if m < 2 {
        return Err(invalid("alignment needs at least two clusters"));
    }
    let size = perms[0].len();
    let mut filters = Vec::with_capacity(m);
    for (i, p) in perms.iter().enumerate() {
        let w = &weights.cluster(i).w;
        if p.len() != size || w.ncols() != size {
            return Err(invalid(format!(
                "cluster {i} has {} values and a permutation of {}; all clusters must have size {size}",
                w.ncols(),
                p.len()
            )));
        }
        let mut u = unpermuted_weights(w, p);
        for mut row in u.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
        filters.push(u);
    }
    let units = filters[0].nrows();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (&filters[i] * &filters[j]).sum();
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Ok(total / (pairs * units as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Linear;
    use crate::rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng::normal(&mut r))
    }

    fn layer(ws: Vec<Array2<f64>>) -> SelfOrgWeights<Array2<f64>> {
        SelfOrgWeights {
            proj: ws
                .into_iter()
                .map(|w| Linear { b: Array2::zeros((1, w.nrows())), w })
                .collect(),
            shared: false,
        }
    }

    #[test]
    fn perfect_alignment_scores_one() {
        let w0 = random(16, 12, 1);
        let perms: Vec<Permutation> = (0..5).map(|s| Permutation::random(12, &mut rng::stream(s, 2))).collect();
        // W_i = W0 E_i^T: column perm[j] of W_i is column j of W0.
        let ws = perms
            .iter()
            .map(|p| {
                let mut w = Array2::zeros((16, 12));
                for (j, &d) in p.mapping().iter().enumerate() {
                    w.column_mut(d).assign(&w0.column(j));
                }
                w
            })
            .collect();
        let l = layer(ws);
        for (i, p) in perms.iter().enumerate() {
            assert_eq!(unpermuted_weights(&l.proj[i].w, p), w0);
        }
        assert!((alignment_metric(&l, &perms).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_weights_score_near_zero() {
        let perms: Vec<Permutation> = (0..6).map(|_| Permutation::identity(48)).collect();
        let l = layer((0..6).map(|s| random(48, 48, 100 + s)).collect());
        assert!(alignment_metric(&l, &perms).unwrap().abs() < 0.1);
    }

    #[test]
    fn unequal_sizes_rejected() {
        let l = layer(vec![random(4, 3, 1), random(4, 2, 2)]);
        let perms = vec![Permutation::identity(3), Permutation::identity(2)];
        assert!(alignment_metric(&l, &perms).is_err());
    }
}
