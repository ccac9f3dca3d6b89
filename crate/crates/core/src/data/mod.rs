//! Dataset ingestion and the synthetic variants built from CIFAR-10:
//! permuted, locally-permuted and foveated.

mod cifar;
mod foveate;
mod lattice;
mod permute;
mod synthetic;
mod tabular;

pub use cifar::{
    load_cifar, upsample, LabeledImageSet, CIFAR_CHANNELS, CIFAR_CLASSES, CIFAR_RECORD_BYTES,
    CIFAR_SIDE,
};
pub use foveate::{foveate, foveate_dataset, FoveatedSignalSet, FoveationSampler, GaussianKernel};
pub use lattice::{build_retina_lattice, LatticeConfig, RingSpec, SamplingLattice};
pub use permute::{
    apply_local_permutations, apply_permutation, make_global_permutation,
    make_local_permutations, LocalPermutationMode, Permutation,
};
pub use tabular::{load_labels_csv, load_tabular_csv, write_labels_csv};
pub use synthetic::{block_labels, latent_block_signals, planted_block_affinity, factor_labels, LatentBlockModel, LatentBlocks};
