use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::affinity::DEFAULT_BINS;
use crate::data::{LatticeConfig, LocalPermutationMode};
use crate::error::{Error, Result};
use crate::eval::{ProbeConfig, Similarity};
use crate::model::{ModelConfig, TrainConfig};
use crate::real::Precision;
use crate::spectral::{ClusterParams, DiscretizeMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// CIFAR pixels as they are.
    Plain,
    /// CIFAR pixels under one global permutation.
    Permuted,
    /// Patches each scrambled by their own permutation.
    LocalPermuted,
    /// Retina-lattice samples of upsampled images, globally permuted.
    Foveated,
    /// Numeric CSV.
    Tabular,
    /// Generated block-structured signals.
    Synthetic,
}

impl Variant {
    pub fn is_image(self) -> bool {
        matches!(self, Variant::Plain | Variant::Permuted | Variant::LocalPermuted | Variant::Foveated)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Permuted => "permuted",
            Variant::LocalPermuted => "local-permuted",
            Variant::Foveated => "foveated",
            Variant::Tabular => "tabular",
            Variant::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub test_samples: usize,
    pub sizes: Vec<usize>,
    /// Shared factors behind the blocks; 0 gives every block its own
    /// independent factor.
    pub factors: usize,
    pub noise: f64,
    pub classes: usize,
    /// Render every test stimulus twice: rows `i` and `i + test_samples`
    /// are two presentations of one stimulus.
    pub repeats: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            test_samples: 256,
            sizes: vec![4; 16],
            factors: 4,
            noise: 0.3,
            classes: 4,
            repeats: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub variant: Variant,
    /// CIFAR batch files, or one CSV for tabular data.
    #[serde(default)]
    pub source: Vec<PathBuf>,
    #[serde(default)]
    pub test_source: Vec<PathBuf>,
    /// Label CSVs for tabular data.
    pub labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Keep only the first `limit` training images.
    pub limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Held-out share when there is no separate test source.
    #[serde(default)]
    pub test_fraction: f64,
    /// Grayscale average pooling for plain and permuted images.
    pub pool: Option<usize>,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_local_mode")]
    pub local_mode: LocalPermutationMode,
    #[serde(default = "default_upsample")]
    pub upsample: usize,
    pub lattice: Option<LatticeConfig>,
    /// Permute foveated dimensions.
    #[serde(default = "yes")]
    pub permute: bool,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

fn default_patch() -> usize {
    4
}

fn default_local_mode() -> LocalPermutationMode {
    LocalPermutationMode::Random
}

fn default_upsample() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinityConfig {
    pub bins: usize,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterSource {
    /// Density-adjusted spectral clustering of the affinity.
    Spectral,
    /// The known grouping: image patches, or generated blocks.
    Patches,
    /// One dimension per cluster.
    Singletons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub source: ClusterSource,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub method: DiscretizeMethod,
    pub kmeans_restarts: usize,
    pub self_loops: bool,
    /// Extra (alpha, beta) combinations clustered into `grid/` subruns.
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let p = ClusterParams::default();
        Self {
            source: ClusterSource::Spectral,
            m: p.m,
            alpha: p.alpha,
            beta: p.beta,
            method: p.method,
            kmeans_restarts: p.kmeans_restarts,
            self_loops: p.self_loops,
            alpha_grid: Vec::new(),
            beta_grid: Vec::new(),
        }
    }
}

impl ClusterConfig {
    pub fn params(&self, alpha: f64, beta: f64, seed: u64) -> ClusterParams {
        ClusterParams {
            m: self.m,
            alpha,
            beta,
            method: self.method,
            seed,
            kmeans_restarts: self.kmeans_restarts,
            self_loops: self.self_loops,
        }
    }

    /// Every (alpha, beta) of the grid, alpha varying fastest.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.beta_grid
            .iter()
            .flat_map(|&b| self.alpha_grid.iter().map(move |&a| (a, b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTask {
    /// Probe trained on the training split, scored on the test split.
    Probe,
    /// Match first and second presentations within the test split.
    PairDecode,
    /// k-fold probe over the training split, refitting the whole pipeline
    /// per fold.
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub task: EvalTask,
    pub k_folds: usize,
    pub probe: ProbeConfig,
    pub similarity: Similarity,
    /// Evaluate the seeded initialization instead of the trained checkpoint.
    pub untrained: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: EvalTask::Probe,
            k_folds: 5,
            probe: ProbeConfig::default(),
            similarity: Similarity::Cosine,
            untrained: false,
        }
    }
}

/// Everything a run needs. Relative paths are resolved against the
/// config file's directory. `seed` and `precision` apply to every stage
/// and override the copies inside `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub affinity: AffinityConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: impl AsRef<Path>) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        let base = base.as_ref();
        let d = &mut cfg.dataset;
        for p in d.source.iter_mut().chain(d.test_source.iter_mut()).chain(d.labels.iter_mut()).chain(d.test_labels.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.sync();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Pushes the top-level seed and precision into `[train]`.
    pub fn sync(&mut self) {
        self.train.seed = self.seed;
        self.train.precision = self.precision;
    }

    pub fn with_overrides(mut self, seed: Option<u64>, precision: Option<Precision>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = precision {
            self.precision = p;
        }
        self.sync();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.variant {
            Variant::Synthetic => {
                if !d.source.is_empty() {
                    return Err(config_err("synthetic data takes no source files"));
                }
                let s = &d.synthetic;
                let factors = if s.factors == 0 { s.sizes.len() } else { s.factors };
                if s.samples < 2 || s.sizes.is_empty() || s.classes < 2 || s.classes > factors {
                    return Err(config_err("synthetic data needs >= 2 samples, blocks, and 2 <= classes <= factors"));
                }
            }
            Variant::Tabular => {
                if d.source.len() != 1 || d.labels.is_none() {
                    return Err(config_err("tabular data needs exactly one source CSV and a labels CSV"));
                }
                if d.test_source.len() > 1 || d.test_source.is_empty() != d.test_labels.is_none() {
                    return Err(config_err("tabular test data needs one CSV and its labels CSV"));
                }
            }
            _ => {
                if d.source.is_empty() {
                    return Err(config_err(format!("variant {} needs at least one source file", d.variant.name())));
                }
            }
        }
        for p in d.source.iter().chain(&d.test_source).chain(&d.labels).chain(&d.test_labels) {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(config_err("test_fraction must lie in [0, 1)"));
        }
        if d.pool.is_some() && !matches!(d.variant, Variant::Plain | Variant::Permuted) {
            return Err(config_err("pool applies to plain and permuted images only"));
        }
        if d.variant == Variant::Foveated && d.upsample == 0 {
            return Err(config_err("upsample must be positive"));
        }
        let c = &self.cluster;
        let alphas = std::iter::once(c.alpha).chain(c.alpha_grid.iter().copied());
        if d.variant != Variant::Foveated && alphas.clone().any(|a| a != 0.0) {
            return Err(config_err("alpha != 0 needs eccentricities, which only the foveated variant has"));
        }
        if c.source == ClusterSource::Patches && !matches!(d.variant, Variant::LocalPermuted | Variant::Synthetic) {
            return Err(config_err("cluster source 'patches' needs the local-permuted or synthetic variant"));
        }
        if c.alpha_grid.is_empty() != c.beta_grid.is_empty() {
            return Err(config_err("alpha_grid and beta_grid go together"));
        }
        if self.affinity.bins < 2 {
            return Err(config_err("affinity needs at least two bins"));
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_synthetic_config() {
        let c = PipelineConfig::from_toml("seed = 3\n[dataset]\nvariant = \"synthetic\"\n", ".").unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.precision, Precision::F64);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields_and_bad_combinations() {
        assert!(PipelineConfig::from_toml("[dataset]\nvariant = \"synthetic\"\nsauce = 1\n", ".").is_err());
        let c = PipelineConfig::from_toml("[dataset]\nvariant = \"plain\"\n", ".").unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = PipelineConfig::from_toml("[dataset]\nvariant = \"synthetic\"\n[cluster]\nalpha = 0.5\n", ".").unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn missing_source_is_io_error() {
        let c = PipelineConfig::from_toml("[dataset]\nvariant = \"permuted\"\nsource = [\"nope.bin\"]\n", "/nonexistent").unwrap();
        assert!(matches!(c.validate(), Err(Error::Io { .. })));
    }

    #[test]
    fn grid_order() {
        let c = ClusterConfig { alpha_grid: vec![0.0, 0.5, 1.0], beta_grid: vec![0.0, 2.0], ..Default::default() };
        assert_eq!(c.grid()[..4], [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (0.0, 2.0)]);
    }
}
