//! Density-adjusted spectral clustering of signal dimensions.
//!
//! Given an affinity `A` with degrees `d_i = sum_j A_ij` and densities `p`,
//! the operator is `L = P^1/2 D^-1/2 A D^-1/2 P^1/2`. Its top-k eigenvectors,
//! row-normalized, embed each dimension on the unit sphere in R^k, and the
//! embedding is discretized into k clusters by the rotation scheme (or by
//! k-means).

mod assignment;
mod discretize;
mod eigen;
mod kmeans;
mod svd;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use assignment::{canonical_labels, ClusterAssignment};
pub use discretize::{discretize_yu_shi, RotationState, ROTATION_MAX_ITERATIONS, ROTATION_TOLERANCE};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use kmeans::{kmeans, wcss, KMeansResult, LLOYD_MAX_ITERATIONS};
pub use svd::{jacobi_svd, Svd};

use crate::affinity::{density, AffinityMatrix, DensityVector};
use crate::error::{invalid, Error, Result};
use crate::provenance::hash_f64s;

/// Symmetric operator the embedding is computed from.
#[derive(Debug, Clone)]
pub struct DensityLaplacian {
    pub matrix: Array2<f64>,
    pub affinity_hash: String,
    pub density_hash: String,
}

pub fn build_density_laplacian(affinity: &AffinityMatrix, p: &DensityVector) -> Result<DensityLaplacian> {
    let a = affinity.values();
    let n = a.nrows();
    if p.len() != n {
        return Err(invalid(format!("{} densities for {n} dimensions", p.len())));
    }
    if let Some(v) = p.p.iter().find(|v| !(**v > 0.0)) {
        return Err(invalid(format!("density {v} is not positive")));
    }
    let degree: Vec<f64> = a.axis_iter(Axis(0)).map(|r| r.sum()).collect();
    if let Some(index) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedDimension { index });
    }
    let scale: Vec<f64> = (0..n).map(|i| p.p[i].sqrt() / degree[i].sqrt()).collect();
    let matrix = Array2::from_shape_fn((n, n), |(i, j)| scale[i] * a[[i, j]] * scale[j]);
    Ok(DensityLaplacian {
        matrix,
        affinity_hash: hash_f64s(a.iter().copied()),
        density_hash: hash_f64s(p.p.iter().copied()),
    })
}

/// `D^-1/2 A D^-1/2` computed directly; the uniform-density reference.
pub fn normalized_affinity(affinity: &AffinityMatrix) -> Result<Array2<f64>> {
    let a = affinity.values();
    let d: Array1<f64> = a.sum_axis(Axis(1));
    if let Some(index) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::IsolatedDimension { index });
    }
    let inv_sqrt = d.mapv(|x| 1.0 / x.sqrt());
    let col = inv_sqrt.view().insert_axis(Axis(1));
    let row = inv_sqrt.view().insert_axis(Axis(0));
    Ok(&(a * &col) * &row)
}

#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// D x k, eigenvectors as columns.
    pub x: Array2<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `x` with unit-norm rows.
    pub y: Array2<f64>,
}

/// Threshold below which an eigenvector entry is treated as zero when fixing
/// the sign convention.
const SIGN_EPS: f64 = 1e-10;

/// The k eigenpairs of largest eigenvalue, each vector signed so that its
/// first nonzero entry is positive.
pub fn top_k_eigenvectors(l: &Array2<f64>, k: usize) -> Result<SpectralEmbedding> {
    let n = l.nrows();
    if k == 0 || k > n {
        return Err(invalid(format!("k = {k} eigenvectors requested from a {n}x{n} matrix")));
    }
    let eig = symmetric_eigen(l)?;
    let mut x = Array2::<f64>::zeros((n, k));
    let mut eigenvalues = Vec::with_capacity(k);
    for j in 0..k {
        let src = n - 1 - j;
        let mut v = eig.vectors.column(src).to_owned();
        if let Some(first) = v.iter().find(|e| e.abs() > SIGN_EPS) {
            if *first < 0.0 {
                v.mapv_inplace(|e| -e);
            }
        }
        x.column_mut(j).assign(&v);
        eigenvalues.push(eig.values[src]);
    }

    let fro = l.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = 1e-8 * fro.max(f64::MIN_POSITIVE);
    for j in 0..k {
        let col = x.column(j);
        let r = l.dot(&col) - &col * eigenvalues[j];
        let res = r.dot(&r).sqrt();
        if res >= bound && res > 1e-300 {
            return Err(Error::Numeric(format!(
                "eigenpair {j} (lambda = {:e}) has residual {res:e} >= {bound:e}",
                eigenvalues[j]
            )));
        }
    }
    let y = row_normalize(&x);
    Ok(SpectralEmbedding { x, eigenvalues, y })
}

/// Scales every row to unit norm. Rows with norm below 1e-12 become the
/// first basis vector.
pub fn row_normalize(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < 1e-12 {
            log::warn!("embedding row {i} has norm {norm:e}; mapped to e1");
            row.fill(0.0);
            if let Some(first) = row.first_mut() {
                *first = 1.0;
            }
        } else {
            row /= norm;
        }
    }
    y
}

/// Multiway normalized cut `sum_c cut(c, rest) / vol(c)`.
pub fn normalized_cut(affinity: &Array2<f64>, labels: &[usize]) -> f64 {
    let m = labels.iter().copied().max().map_or(0, |x| x + 1);
    let mut cut = vec![0.0; m];
    let mut vol = vec![0.0; m];
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            let a = affinity[[i, j]];
            vol[li] += a;
            if li != lj {
                cut[li] += a;
            }
        }
    }
    cut.iter()
        .zip(&vol)
        .map(|(c, v)| if *v > 0.0 { c / v } else { 0.0 })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscretizeMethod {
    Rotation,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub method: DiscretizeMethod,
    pub seed: u64,
    pub kmeans_restarts: usize,
    /// Keep the entropy diagonal of the affinity in the graph.
    pub self_loops: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            m: 64,
            alpha: 0.0,
            beta: 0.0,
            method: DiscretizeMethod::Rotation,
            seed: 0,
            kmeans_restarts: 10,
            self_loops: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub assignment: ClusterAssignment,
    pub density: DensityVector,
    pub eigenvalues: Vec<f64>,
    pub rotation: Option<RotationState>,
    pub laplacian_hash: String,
}

/// Discretizes an embedding with the configured method.
pub fn discretize(y: &Array2<f64>, params: &ClusterParams) -> Result<(ClusterAssignment, Option<RotationState>)> {
    match params.method {
        DiscretizeMethod::Rotation => {
            let (a, state) = discretize_yu_shi(y, params.seed)?;
            Ok((a, Some(state)))
        }
        DiscretizeMethod::Kmeans => {
            Ok((kmeans(y, params.m, params.seed, params.kmeans_restarts)?.assignment, None))
        }
    }
}

/// Full pipeline: density, operator, embedding, discretization.
pub fn cluster_dimensions(
    affinity: &AffinityMatrix,
    eccentricity: Option<&[f64]>,
    params: &ClusterParams,
) -> Result<ClusterResult> {
    let d = affinity.dim();
    if params.m == 0 || params.m > d {
        return Err(invalid(format!("{} clusters requested for {d} dimensions", params.m)));
    }
    let graph = if params.self_loops {
        affinity.clone()
    } else {
        affinity.without_self_loops()
    };
    let q = if params.alpha != 0.0 { eccentricity } else { None };
    let dens = density(q, &graph, params.alpha, params.beta)?;
    if params.m == 1 {
        return Ok(ClusterResult {
            assignment: ClusterAssignment::from_labels(&vec![0; d], 1)?,
            density: dens,
            eigenvalues: vec![],
            rotation: None,
            laplacian_hash: String::new(),
        });
    }
    let lap = build_density_laplacian(&graph, &dens)?;
    let emb = top_k_eigenvectors(&lap.matrix, params.m)?;
    let (assignment, rotation) = discretize(&emb.y, params)?;
    Ok(ClusterResult {
        assignment,
        density: dens,
        eigenvalues: emb.eigenvalues,
        rotation,
        laplacian_hash: hash_f64s(lap.matrix.iter().copied()),
    })
}

/// Classic normalized spectral clustering on `A` (no density weighting),
/// built from [`normalized_affinity`] rather than the density operator.
pub fn classic_spectral_clustering(affinity: &AffinityMatrix, params: &ClusterParams) -> Result<ClusterAssignment> {
    let graph = if params.self_loops {
        affinity.clone()
    } else {
        affinity.without_self_loops()
    };
    let l = normalized_affinity(&graph)?;
    let emb = top_k_eigenvectors(&l, params.m)?;
    Ok(discretize(&emb.y, params)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::DensityVector;
    use ndarray::array;

    fn dens(p: Vec<f64>) -> DensityVector {
        DensityVector {
            p,
            ..DensityVector::uniform(0)
        }
    }

    #[test]
    fn laplacian_examples() {
        let a = AffinityMatrix::from_values(array![[0.0, 1.0], [1.0, 0.0]], 16).unwrap();
        let l = build_density_laplacian(&a, &dens(vec![1.0, 1.0])).unwrap();
        assert_eq!(l.matrix, array![[0.0, 1.0], [1.0, 0.0]]);
        let l = build_density_laplacian(&a, &dens(vec![4.0, 1.0])).unwrap();
        assert_eq!(l.matrix, array![[0.0, 2.0], [2.0, 0.0]]);

        let b = AffinityMatrix::from_values(array![[0.0, 2.0, 1.0], [2.0, 0.0, 3.0], [1.0, 3.0, 0.0]], 16).unwrap();
        let c = 0.3;
        let l = build_density_laplacian(&b, &dens(vec![c; 3])).unwrap();
        let reference = normalized_affinity(&b).unwrap() * c;
        for (x, y) in l.matrix.iter().zip(reference.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_dimension_is_named() {
        let a = AffinityMatrix::from_values(array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 16).unwrap();
        assert!(matches!(
            build_density_laplacian(&a, &dens(vec![1.0; 3])),
            Err(Error::IsolatedDimension { index: 2 })
        ));
    }

    #[test]
    fn eigen_examples() {
        let e = top_k_eigenvectors(&array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]], 2).unwrap();
        assert_eq!(e.eigenvalues.len(), 2);
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14 && (e.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((e.x[[0, 0]] - 1.0).abs() < 1e-14 && (e.x[[1, 1]] - 1.0).abs() < 1e-14);

        let e = top_k_eigenvectors(&array![[0.0, 2.0], [2.0, 0.0]], 2).unwrap();
        assert!((e.eigenvalues[0] - 2.0).abs() < 1e-14 && (e.eigenvalues[1] + 2.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.x[[0, 0]] - h).abs() < 1e-14 && (e.x[[1, 0]] - h).abs() < 1e-14);
        assert!(e.x[[0, 1]] > 0.0);

        assert!(top_k_eigenvectors(&array![[1.0]], 2).is_err());
    }

    #[test]
    fn row_normalize_cases() {
        let y = row_normalize(&array![[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(y, array![[0.6, 0.8], [1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn single_cluster_pipeline() {
        let a = AffinityMatrix::from_values(array![[1.0, 0.5, 0.2], [0.5, 1.0, 0.1], [0.2, 0.1, 1.0]], 16).unwrap();
        let params = ClusterParams {
            m: 1,
            ..Default::default()
        };
        let r = cluster_dimensions(&a, None, &params).unwrap();
        assert_eq!(r.assignment.sizes(), &[3]);
    }
}
