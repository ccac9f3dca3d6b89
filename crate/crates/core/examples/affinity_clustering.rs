//! Recovers hidden groups of dimensions from mutual information alone.
//!
//!     cargo run --release --example affinity_clustering

use urlost::affinity::{affinity_matrix, DEFAULT_BINS};
use urlost::data::{apply_permutation, latent_block_signals, make_global_permutation};
use urlost::eval::adjusted_rand_index;
use urlost::spectral::{cluster_dimensions, ClusterParams};

fn main() -> urlost::Result<()> {
    // 10 blocks of 6 dimensions; each block is driven by its own latent factor.
    let blocks = latent_block_signals(1000, &[6; 10], 0.5, 7)?;
    // Shuffle the dimensions so the block structure is hidden.
    let perm = make_global_permutation(7, blocks.signals.n_dims())?;
    let signals = apply_permutation(&blocks.signals, &perm)?;
    let truth = perm.apply_slice(&blocks.dim_labels)?;

    let a = affinity_matrix(&signals, DEFAULT_BINS)?;
    let v = a.values();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for i in 0..v.nrows() {
        for j in 0..i {
            if truth[i] == truth[j] {
                within += v[[i, j]];
                nw += 1;
            } else {
                across += v[[i, j]];
                na += 1;
            }
        }
    }
    println!("mean MI within blocks {:.3} bits, across {:.3} bits", within / nw as f64, across / na as f64);

    for m in [5, 10, 15] {
        let r = cluster_dimensions(&a, None, &ClusterParams { m, seed: 1, ..Default::default() })?;
        let ari = adjusted_rand_index(r.assignment.labels(), &truth)?;
        println!("M = {m:2}: sizes {:?}, ARI {ari:.3}", r.assignment.sizes());
    }
    Ok(())
}
