//! Pairwise mutual-information affinity between signal dimensions, and the
//! density weights that bias clustering toward information-balanced
//! clusters.

mod density;
mod mi;

pub use density::{density, write_density_csv, DensityVector, EccentricitySource, ECCENTRICITY_FLOOR};
pub use mi::{affinity_matrix, bin_index, histogram_pmf, mutual_information, AffinityMatrix, DEFAULT_BINS};
