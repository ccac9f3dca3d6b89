//! Fixed pixel permutations: one global shuffle shared by every sample, or
//! one shuffle per image patch.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::cifar::LabeledImageSet;
use crate::error::{invalid, shape, Result};
use crate::rng::{self, streams};
use crate::signal::SignalMatrix;

/// A bijection on `0..len`. `mapping[i]` is the position that source index
/// `i` is sent to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
    seed: Option<u64>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(invalid(format!("mapping is not a bijection on 0..{}", mapping.len())));
            }
        }
        Ok(Self {
            mapping,
            seed: None,
        })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            mapping: (0..len).collect(),
            seed: None,
        }
    }

    /// Uniformly random permutation from a seeded Fisher-Yates shuffle.
    pub fn random(len: usize, rng: &mut impl rand::Rng) -> Self {
        let mut mapping: Vec<usize> = (0..len).collect();
        rng::shuffle(rng, &mut mapping);
        Self {
            mapping,
            seed: None,
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self {
            mapping: inv,
            seed: self.seed,
        }
    }

    /// `out[mapping[i]] = values[i]`.
    pub fn apply_slice<T: Clone>(&self, values: &[T]) -> Result<Vec<T>> {
        if values.len() != self.len() {
            return Err(shape(format!(
                "permutation of {} elements applied to {}",
                self.len(),
                values.len()
            )));
        }
        let mut out = values.to_vec();
        for (i, v) in values.iter().enumerate() {
            out[self.mapping[i]] = v.clone();
        }
        Ok(out)
    }
}

/// Seeded global permutation of `dims` signal dimensions.
pub fn make_global_permutation(seed: u64, dims: usize) -> Result<Permutation> {
    if dims == 0 {
        return Err(invalid("permutation needs at least one dimension"));
    }
    let mut p = Permutation::random(dims, &mut rng::stream(seed, streams::GLOBAL_PERMUTATION));
    p.seed = Some(seed);
    Ok(p)
}

/// Moves column `i` of every sample to column `perm.mapping()[i]`.
pub fn apply_permutation(signals: &SignalMatrix, perm: &Permutation) -> Result<SignalMatrix> {
    if signals.n_dims() != perm.len() {
        return Err(invalid(format!(
            "permutation over {} dims applied to {}-dim signals",
            perm.len(),
            signals.n_dims()
        )));
    }
    let source = perm.inverse();
    Ok(signals.select_columns(source.mapping()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalPermutationMode {
    Random,
    Identity,
}

/// One permutation per patch position, acting on the patch flattened in
/// (row, col, channel) order. Patches are numbered row-major.
pub fn make_local_permutations(
    seed: u64,
    patch_size: usize,
    height: usize,
    width: usize,
    channels: usize,
    mode: LocalPermutationMode,
) -> Result<Vec<Permutation>> {
    if patch_size == 0 || height % patch_size != 0 || width % patch_size != 0 {
        return Err(invalid(format!(
            "patch size {patch_size} must divide the {height}x{width} image"
        )));
    }
    let patches = (height / patch_size) * (width / patch_size);
    let len = patch_size * patch_size * channels;
    Ok((0..patches)
        .map(|p| {
            let mut perm = match mode {
                LocalPermutationMode::Identity => Permutation::identity(len),
                LocalPermutationMode::Random => Permutation::random(
                    len,
                    &mut rng::substream(seed, streams::LOCAL_PERMUTATION, p as u64),
                ),
            };
            perm.seed = Some(seed);
            perm
        })
        .collect())
}

/// Patchifies every image and permutes each patch with its own fixed
/// permutation. The output is patch-major: dimension `p * L + j` holds
/// element `j` of permuted patch `p`, where `L = patch_size^2 * C`.
pub fn apply_local_permutations(
    set: &LabeledImageSet,
    patch_size: usize,
    perms: &[Permutation],
) -> Result<SignalMatrix> {
    let (h, w, c) = set.dims();
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(invalid(format!(
            "patch size {patch_size} must divide the {h}x{w} image"
        )));
    }
    let (ph, pw) = (h / patch_size, w / patch_size);
    let len = patch_size * patch_size * c;
    if perms.len() != ph * pw || perms.iter().any(|p| p.len() != len) {
        return Err(invalid(format!(
            "expected {} permutations of length {len}",
            ph * pw
        )));
    }
    let mut out = Array2::<f64>::zeros((set.len(), ph * pw * len));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let img = set.image(i);
        for py in 0..ph {
            for px in 0..pw {
                let p = py * pw + px;
                let perm = perms[p].mapping();
                let mut j = 0;
                for y in 0..patch_size {
                    for x in 0..patch_size {
                        for ch in 0..c {
                            let v = img[[py * patch_size + y, px * patch_size + x, ch]];
                            row[p * len + perm[j]] = v as f64 / 255.0;
                            j += 1;
                        }
                    }
                }
            }
        }
    }
    SignalMatrix::new(out, crate::signal::Normalization::UnitRange)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};
    use proptest::prelude::*;

    #[test]
    fn golden_three_element_mapping() {
        let p = make_global_permutation(42, 3).unwrap();
        assert_eq!(p.mapping(), GOLDEN_SEED42_D3);
        assert_eq!(p, make_global_permutation(42, 3).unwrap());
    }

    // Frozen output of the seeded shuffle; a change here means every
    // permuted dataset on disk changes too.
    const GOLDEN_SEED42_D3: &[usize] = &[0, 2, 1];

    #[test]
    fn mismatch_is_rejected() {
        let s = SignalMatrix::raw(array![[1.0, 2.0]]).unwrap();
        assert!(apply_permutation(&s, &Permutation::identity(3)).is_err());
        assert!(make_global_permutation(1, 0).is_err());
        assert!(Permutation::new(vec![0, 0]).is_err());
    }

    #[test]
    fn local_permutation_counts() {
        let perms = make_local_permutations(9, 4, 32, 32, 3, LocalPermutationMode::Random).unwrap();
        assert_eq!(perms.len(), 64);
        for p in &perms {
            let mut sorted = p.mapping().to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..48).collect::<Vec<_>>());
        }
        assert_ne!(perms[0], perms[1]);
        assert!(make_local_permutations(9, 5, 32, 32, 3, LocalPermutationMode::Random).is_err());
    }

    fn ramp_set() -> LabeledImageSet {
        let images = Array4::from_shape_fn((2, 4, 4, 2), |(i, y, x, c)| (i * 50 + y * 8 + x * 2 + c) as u8);
        LabeledImageSet::new(images, vec![0, 1], 2).unwrap()
    }

    #[test]
    fn identity_local_permutation_is_plain_patchify() {
        let set = ramp_set();
        let perms = make_local_permutations(0, 2, 4, 4, 2, LocalPermutationMode::Identity).unwrap();
        let s = apply_local_permutations(&set, 2, &perms).unwrap();
        // patch 1 is rows 0..2, cols 2..4; element 3 is (row 0, col 3, channel 1)
        assert!((s.values()[[1, 8 + 3]] - set.images()[[1, 0, 3, 1]] as f64 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn single_patch_is_a_global_permutation() {
        let set = ramp_set();
        let perms = make_local_permutations(5, 4, 4, 4, 2, LocalPermutationMode::Random).unwrap();
        assert_eq!(perms.len(), 1);
        let local = apply_local_permutations(&set, 4, &perms).unwrap();
        let ident = make_local_permutations(0, 4, 4, 4, 2, LocalPermutationMode::Identity).unwrap();
        let flat = apply_local_permutations(&set, 4, &ident).unwrap();
        let global = apply_permutation(&flat, &perms[0]).unwrap();
        assert_eq!(local, global);
    }

    proptest! {
        #[test]
        fn permutation_round_trip(seed in any::<u64>(), d in 1usize..40, n in 1usize..5) {
            let values = Array2::from_shape_fn((n, d), |(i, j)| (i * 100 + j) as f64);
            let s = SignalMatrix::raw(values).unwrap();
            let p = make_global_permutation(seed, d).unwrap();
            let there = apply_permutation(&s, &p).unwrap();
            let back = apply_permutation(&there, &p.inverse()).unwrap();
            prop_assert_eq!(back, s);
            for i in 0..d {
                prop_assert_eq!(there.values()[[0, p.mapping()[i]]], (i) as f64);
            }
        }
    }
}
