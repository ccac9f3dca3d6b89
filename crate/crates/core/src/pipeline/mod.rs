//! Stage-by-stage orchestration behind the command-line tool.
//!
//! A run lives in one output directory. Each stage reads its inputs from
//! there, writes its artifacts, and records their sha256 hashes in
//! `provenance/<stage>.json`. Consumers check those hashes, and the hashes
//! the producer saw for its own inputs, before using an artifact.
//! Artifacts are looked up in the run directory first, then in its
//! parent and grandparent, so grid subruns share their parent's signals
//! and affinity.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use config::{
    AffinityConfig, ClusterConfig, ClusterSource, DatasetConfig, EvalConfig, EvalTask, PipelineConfig,
    SyntheticConfig, Variant,
};
pub use report::{cmd_report, Report, ReportRow};

use crate::affinity::{affinity_matrix, write_density_csv, AffinityMatrix};
use crate::data::{
    apply_local_permutations, apply_permutation, build_retina_lattice, factor_labels, foveate_dataset, load_cifar,
    load_labels_csv, load_tabular_csv, make_global_permutation, make_local_permutations, write_labels_csv,
    LabeledImageSet, LatentBlockModel, LatticeConfig, Permutation,
};
use crate::error::{Error, Result};
use crate::eval::{kfold_cv, linear_probe, pair_decoding_accuracy, EvalReport, UrlostPipeline};
use crate::io::{read_matrix, write_atomic, write_matrix};
use crate::model::{
    alignment_metric, encode, train, write_history_csv, EpochRecord, TrainConfig, TrainOptions, TrainState, Weights,
};
use crate::provenance::{hash_bytes, hash_file};
use crate::real::{Precision, Real};
use crate::rng::{self, streams};
use crate::signal::{MinMaxScaler, Normalization, SignalMatrix};
use crate::spectral::{cluster_dimensions, ClusterAssignment};

pub const SIGNALS: &str = "signals.urlm";
pub const LABELS: &str = "labels.csv";
pub const TEST_SIGNALS: &str = "test_signals.urlm";
pub const TEST_LABELS: &str = "test_labels.csv";
pub const ECCENTRICITY: &str = "eccentricity.csv";
pub const PERMUTATION: &str = "permutation.json";
pub const LOCAL_PERMUTATIONS: &str = "local_permutations.json";
pub const AFFINITY: &str = "affinity.urlm";
pub const CLUSTERS: &str = "clusters.json";
pub const DENSITY: &str = "density.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSSES: &str = "losses.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";

/// What a stage consumed and produced, by file name and sha256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl StageRecord {
    pub fn path(dir: &Path, stage: &str) -> PathBuf {
        dir.join("provenance").join(format!("{stage}.json"))
    }

    /// The record of `stage` nearest to `dir`, with the directory holding it.
    pub fn find(dir: &Path, stage: &str) -> Result<(Self, PathBuf)> {
        for d in dir.ancestors().take(3) {
            let p = Self::path(d, stage);
            if p.exists() {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                return Ok((serde_json::from_str(&text)?, d.to_path_buf()));
            }
        }
        Err(Error::InvalidConfig(format!(
            "no {stage} artifacts under {}; run the {stage} stage first",
            dir.display()
        )))
    }
}

/// Tracks the inputs of the stage being run.
struct Inputs {
    hashes: BTreeMap<String, String>,
}

impl Inputs {
    fn new() -> Self {
        Self { hashes: BTreeMap::new() }
    }

    /// Locates `name` as produced by `producer`, checks that it and the
    /// producer's own inputs are unchanged, and records it.
    fn take(&mut self, dir: &Path, producer: &StageRecord, name: &str) -> Result<PathBuf> {
        let expected = producer
            .outputs
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("stage {} did not produce {name}", producer.stage)))?;
        let path = locate(dir, name)?;
        check(&path, expected)?;
        for (input, h) in &producer.inputs {
            let p = locate(dir, input)?;
            check(&p, h)?;
        }
        self.hashes.insert(name.to_string(), expected.clone());
        Ok(path)
    }
}

fn check(path: &Path, expected: &str) -> Result<()> {
    let found = hash_file(path)?;
    if found != expected {
        return Err(Error::StaleArtifact { path: path.to_path_buf(), expected: expected.to_string(), found });
    }
    Ok(())
}

fn locate(dir: &Path, name: &str) -> Result<PathBuf> {
    dir.ancestors()
        .take(3)
        .map(|d| d.join(name))
        .find(|p| p.exists())
        .ok_or_else(|| Error::io(dir.join(name), std::io::Error::new(std::io::ErrorKind::NotFound, "artifact missing")))
}

fn finish(
    dir: &Path,
    stage: &str,
    seed: u64,
    inputs: Inputs,
    outputs: &[&str],
    details: serde_json::Value,
) -> Result<StageRecord> {
    let mut out = BTreeMap::new();
    for name in outputs {
        out.insert(name.to_string(), hash_file(dir.join(name))?);
    }
    let record = StageRecord { stage: stage.into(), seed, inputs: inputs.hashes, outputs: out, details };
    let path = StageRecord::path(dir, stage);
    create_dir(path.parent().expect("provenance dir"))?;
    write_atomic(&path, serde_json::to_string_pretty(&record)?.as_bytes())?;
    Ok(record)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_signals(path: &Path, normalization: Normalization) -> Result<SignalMatrix> {
    SignalMatrix::new(read_matrix::<f64>(path)?, normalization)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDetails {
    pub variant: Variant,
    pub n_train: usize,
    pub n_test: usize,
    pub dims: usize,
    pub classes: usize,
    /// Sizes of the known contiguous dimension groups, if any.
    pub groups: Option<Vec<usize>>,
    pub repeats: bool,
    pub lattice_hash: Option<String>,
    pub permutation_hash: Option<String>,
}

struct Dataset {
    train: SignalMatrix,
    train_labels: Vec<usize>,
    test: Option<(SignalMatrix, Vec<usize>)>,
    classes: usize,
    eccentricity: Option<Vec<f64>>,
    global: Option<Permutation>,
    local: Option<Vec<Permutation>>,
    groups: Option<Vec<usize>>,
    lattice: Option<LatticeConfig>,
    repeats: bool,
}

fn load_images(paths: &[PathBuf], limit: Option<usize>) -> Result<LabeledImageSet> {
    let sets = paths.iter().map(load_cifar).collect::<Result<Vec<_>>>()?;
    let set = LabeledImageSet::concat(&sets)?;
    Ok(match limit {
        Some(n) => set.take(n),
        None => set,
    })
}

/// Converts images per the variant. The permutations and lattice depend
/// only on the seed and image shape, so the training and test splits get
/// the same ones.
fn image_variant(cfg: &PipelineConfig, set: &LabeledImageSet, ds: &mut Dataset) -> Result<SignalMatrix> {
    let d = &cfg.dataset;
    let (h, w, c) = set.dims();
    match d.variant {
        Variant::Plain | Variant::Permuted => {
            let s = match d.pool {
                Some(f) => set.to_pooled_gray(f)?,
                None => set.to_signals(),
            };
            if d.variant == Variant::Plain {
                return Ok(s);
            }
            let perm = match &ds.global {
                Some(p) => p.clone(),
                None => make_global_permutation(cfg.seed, s.n_dims())?,
            };
            let out = apply_permutation(&s, &perm)?;
            ds.global = Some(perm);
            Ok(out)
        }
        Variant::LocalPermuted => {
            if ds.local.is_none() {
                let perms = make_local_permutations(cfg.seed, d.patch_size, h, w, c, d.local_mode)?;
                ds.groups = Some(perms.iter().map(|p| p.len()).collect());
                ds.local = Some(perms);
            }
            apply_local_permutations(set, d.patch_size, ds.local.as_ref().expect("set above"))
        }
        Variant::Foveated => {
            let lc = d.lattice.clone().unwrap_or_else(LatticeConfig::retina);
            let lattice = build_retina_lattice(&lc)?;
            let fov = foveate_dataset(set, &lattice, d.upsample)?;
            let ecc = fov.dim_eccentricities();
            ds.lattice = Some(lc);
            if !d.permute {
                ds.eccentricity = Some(ecc);
                return Ok(fov.signals);
            }
            let perm = match &ds.global {
                Some(p) => p.clone(),
                None => make_global_permutation(cfg.seed, fov.signals.n_dims())?,
            };
            ds.eccentricity = Some(perm.apply_slice(&ecc)?);
            let out = apply_permutation(&fov.signals, &perm)?;
            ds.global = Some(perm);
            Ok(out)
        }
        _ => unreachable!("not an image variant"),
    }
}

fn empty_dataset(train: SignalMatrix, train_labels: Vec<usize>) -> Dataset {
    Dataset {
        train,
        train_labels,
        test: None,
        classes: 0,
        eccentricity: None,
        global: None,
        local: None,
        groups: None,
        lattice: None,
        repeats: false,
    }
}

fn build_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let mut ds = match d.variant {
        Variant::Synthetic => {
            let s = &d.synthetic;
            let model = if s.factors == 0 {
                LatentBlockModel::independent(&s.sizes, s.noise, cfg.seed)?
            } else {
                LatentBlockModel::new(&s.sizes, s.factors, s.noise, cfg.seed)?
            };
            let mut r = rng::substream(cfg.seed, streams::SYNTHETIC, 1);
            let u = model.draw_factors(s.samples, &mut r);
            let x = SignalMatrix::raw(model.render(&u, &mut r))?;
            let mut ds = empty_dataset(x, factor_labels(&u, s.classes));
            if s.test_samples > 0 {
                let mut r = rng::substream(cfg.seed, streams::SYNTHETIC, 2);
                let u = model.draw_factors(s.test_samples, &mut r);
                let mut x = model.render(&u, &mut r);
                let mut y = factor_labels(&u, s.classes);
                if s.repeats {
                    let again = model.render(&u, &mut r);
                    x = ndarray::concatenate![ndarray::Axis(0), x, again];
                    y.extend_from_within(..);
                }
                ds.test = Some((SignalMatrix::raw(x)?, y));
            }
            ds.groups = Some(s.sizes.clone());
            ds.repeats = s.repeats;
            ds.classes = s.classes;
            ds
        }
        Variant::Tabular => {
            let x = load_tabular_csv(&d.source[0])?;
            let y = load_labels_csv(d.labels.as_ref().expect("validated"))?;
            let mut ds = empty_dataset(x, y);
            if let (Some(src), Some(lab)) = (d.test_source.first(), &d.test_labels) {
                ds.test = Some((load_tabular_csv(src)?, load_labels_csv(lab)?));
            }
            ds
        }
        _ => {
            let set = load_images(&d.source, d.limit)?;
            let mut ds = empty_dataset(SignalMatrix::raw(Array2::zeros((0, 0)))?, set.labels().to_vec());
            ds.classes = set.num_classes();
            ds.train = image_variant(cfg, &set, &mut ds)?;
            if !d.test_source.is_empty() {
                let t = load_images(&d.test_source, d.test_limit)?;
                let x = image_variant(cfg, &t, &mut ds)?;
                ds.test = Some((x, t.labels().to_vec()));
            }
            ds
        }
    };
    for (x, y) in std::iter::once((&ds.train, &ds.train_labels)).chain(ds.test.as_ref().map(|(x, y)| (x, y))) {
        if x.n_samples() != y.len() {
            return Err(Error::Shape(format!("{} samples but {} labels", x.n_samples(), y.len())));
        }
    }
    if ds.test.is_none() && d.test_fraction > 0.0 {
        let n = ds.train.n_samples();
        let n_test = ((n as f64 * d.test_fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::stream(cfg.seed, streams::SPLIT), &mut order);
        let (te, tr) = order.split_at(n_test);
        let pick = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| ds.train_labels[i]).collect() };
        ds.test = Some((ds.train.select_rows(te), pick(te)));
        ds.train_labels = pick(tr);
        ds.train = ds.train.select_rows(tr);
    }
    let seen = ds.train_labels.iter().chain(ds.test.iter().flat_map(|(_, y)| y)).max().map_or(0, |m| m + 1);
    ds.classes = ds.classes.max(seen);
    // Raw inputs are min-max scaled with training statistics.
    if ds.train.normalization() != Normalization::UnitRange {
        let scaler = MinMaxScaler::fit(&ds.train)?;
        ds.train = scaler.transform(&ds.train)?;
        if let Some((x, _)) = ds.test.as_mut() {
            *x = scaler.transform(x)?;
        }
    }
    Ok(ds)
}

fn write_eccentricity(path: &Path, ecc: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eccentricity"])?;
    for e in ecc {
        w.write_record([format!("{e:e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_eccentricity(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[0].parse::<f64>().map_err(|e| Error::MalformedFile { path: path.into(), reason: e.to_string() })
        })
        .collect()
}

/// Produces the dataset artifacts: training (and test) signals with
/// labels, plus whatever the variant needs downstream.
pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> Result<StageRecord> {
    let run = || -> Result<StageRecord> {
        cfg.validate()?;
        create_dir(out)?;
        let ds = build_dataset(cfg)?;
        let mut outputs = vec![SIGNALS, LABELS];
        write_matrix(out.join(SIGNALS), ds.train.values())?;
        write_labels_csv(out.join(LABELS), &ds.train_labels)?;
        if let Some((x, y)) = &ds.test {
            write_matrix(out.join(TEST_SIGNALS), x.values())?;
            write_labels_csv(out.join(TEST_LABELS), y)?;
            outputs.extend([TEST_SIGNALS, TEST_LABELS]);
        }
        if let Some(e) = &ds.eccentricity {
            write_eccentricity(&out.join(ECCENTRICITY), e)?;
            outputs.push(ECCENTRICITY);
        }
        let mut permutation_hash = None;
        if let Some(p) = &ds.global {
            let text = serde_json::to_string(p.mapping())?;
            permutation_hash = Some(hash_bytes(text.as_bytes()));
            write_atomic(out.join(PERMUTATION), text.as_bytes())?;
            outputs.push(PERMUTATION);
        }
        if let Some(perms) = &ds.local {
            let maps: Vec<&[usize]> = perms.iter().map(|p| p.mapping()).collect();
            let text = serde_json::to_string(&maps)?;
            permutation_hash = Some(hash_bytes(text.as_bytes()));
            write_atomic(out.join(LOCAL_PERMUTATIONS), text.as_bytes())?;
            outputs.push(LOCAL_PERMUTATIONS);
        }
        let lattice_hash = match &ds.lattice {
            Some(l) => Some(hash_bytes(serde_json::to_string(l)?.as_bytes())),
            None => None,
        };
        let details = SynthDetails {
            variant: cfg.dataset.variant,
            n_train: ds.train.n_samples(),
            n_test: ds.test.as_ref().map_or(0, |(x, _)| x.n_samples()),
            dims: ds.train.n_dims(),
            classes: ds.classes,
            groups: ds.groups,
            repeats: ds.repeats,
            lattice_hash,
            permutation_hash,
        };
        log::info!("synth: {} x {} training signals", details.n_train, details.dims);
        finish(out, "synth", cfg.seed, Inputs::new(), &outputs, serde_json::to_value(details)?)
    };
    run().map_err(|e| e.in_stage("synth"))
}

fn synth_details(record: &StageRecord) -> Result<SynthDetails> {
    Ok(serde_json::from_value(record.details.clone())?)
}

// ---------------------------------------------------------------- affinity

/// Pairwise mutual information of the training signals.
pub fn cmd_affinity(cfg: &PipelineConfig, out: &Path) -> Result<StageRecord> {
    let run = || -> Result<StageRecord> {
        create_dir(out)?;
        let (synth, _) = StageRecord::find(out, "synth")?;
        let mut inputs = Inputs::new();
        let signals = read_signals(&inputs.take(out, &synth, SIGNALS)?, Normalization::UnitRange)?;
        let a = affinity_matrix(&signals, cfg.affinity.bins)?;
        write_matrix(out.join(AFFINITY), a.values())?;
        let details = serde_json::json!({ "bins": a.bins(), "dims": a.dim() });
        finish(out, "affinity", cfg.seed, inputs, &[AFFINITY], details)
    };
    run().map_err(|e| e.in_stage("affinity"))
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFileParams {
    pub alpha: f64,
    pub beta: f64,
    /// Histogram bins of the affinity.
    #[serde(rename = "K")]
    pub bins: Option<usize>,
    /// Eigenvectors used.
    pub k: Option<usize>,
    pub source: ClusterSource,
}

/// The partition as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    #[serde(rename = "M")]
    pub m: usize,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    pub params: ClusterFileParams,
    pub provenance: BTreeMap<String, String>,
}

impl ClusterFile {
    pub fn assignment(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_labels(&self.labels, self.m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn cluster_file(a: &ClusterAssignment, params: ClusterFileParams, provenance: BTreeMap<String, String>) -> ClusterFile {
    ClusterFile { m: a.m(), labels: a.labels().to_vec(), sizes: a.sizes().to_vec(), params, provenance }
}

/// Partitions the dimensions. With a grid, each extra (alpha, beta) gets a
/// subrun directory `grid/alpha<a>_beta<b>` holding its own partition.
pub fn cmd_cluster(cfg: &PipelineConfig, out: &Path) -> Result<StageRecord> {
    let run = || -> Result<StageRecord> {
        cfg.validate()?;
        create_dir(out)?;
        let (synth, _) = StageRecord::find(out, "synth")?;
        let details = synth_details(&synth)?;
        let c = &cfg.cluster;
        let mut inputs = Inputs::new();
        let mut outputs = vec![CLUSTERS];
        match c.source {
            ClusterSource::Singletons | ClusterSource::Patches => {
                inputs.take(out, &synth, SIGNALS)?;
                let a = if c.source == ClusterSource::Singletons {
                    ClusterAssignment::contiguous(details.dims, 1)
                } else {
                    let groups = details
                        .groups
                        .as_ref()
                        .ok_or_else(|| Error::InvalidConfig("dataset has no known grouping".into()))?;
                    ClusterAssignment::from_labels(&crate::data::block_labels(groups), groups.len())?
                };
                let params = ClusterFileParams { alpha: 0.0, beta: 0.0, bins: None, k: None, source: c.source };
                let prov = inputs.hashes.clone();
                write_json(&out.join(CLUSTERS), &cluster_file(&a, params, prov))?;
            }
            ClusterSource::Spectral => {
                let (aff_rec, _) = StageRecord::find(out, "affinity")?;
                let values = read_matrix::<f64>(&inputs.take(out, &aff_rec, AFFINITY)?)?;
                let bins = aff_rec.details["bins"].as_u64().unwrap_or(0) as usize;
                let affinity = AffinityMatrix::from_values(values, bins)?;
                let needs_ecc = c.alpha != 0.0 || c.alpha_grid.iter().any(|&a| a != 0.0);
                let ecc = if needs_ecc { Some(read_eccentricity(&inputs.take(out, &synth, ECCENTRICITY)?)?) } else { None };
                let one = |alpha: f64, beta: f64, dir: &Path| -> Result<()> {
                    let params = c.params(alpha, beta, cfg.seed);
                    let e = if alpha != 0.0 { ecc.as_deref() } else { None };
                    let res = cluster_dimensions(&affinity, e, &params)?;
                    let mut prov = inputs.hashes.clone();
                    prov.insert("laplacian".into(), res.laplacian_hash.clone());
                    let fp = ClusterFileParams {
                        alpha,
                        beta,
                        bins: Some(bins),
                        k: Some(res.assignment.m()),
                        source: c.source,
                    };
                    write_json(&dir.join(CLUSTERS), &cluster_file(&res.assignment, fp, prov))?;
                    write_density_csv(dir.join(DENSITY), &res.density)?;
                    log::info!("cluster: alpha {alpha} beta {beta} -> sizes {:?}", res.assignment.sizes());
                    Ok(())
                };
                one(c.alpha, c.beta, out)?;
                outputs.push(DENSITY);
                for (alpha, beta) in c.grid() {
                    let dir = out.join(grid_dir(alpha, beta));
                    create_dir(&dir)?;
                    one(alpha, beta, &dir)?;
                    let mut sub = Inputs::new();
                    sub.hashes = inputs.hashes.clone();
                    finish(&dir, "cluster", cfg.seed, sub, &[CLUSTERS, DENSITY], serde_json::json!({ "alpha": alpha, "beta": beta }))?;
                }
            }
        }
        let detail = serde_json::json!({ "alpha": c.alpha, "beta": c.beta, "source": c.source, "grid": c.grid() });
        finish(out, "cluster", cfg.seed, inputs, &outputs, detail)
    };
    run().map_err(|e| e.in_stage("cluster"))
}

/// Subrun directory of one grid point, e.g. `grid/alpha0.5_beta2`.
pub fn grid_dir(alpha: f64, beta: f64) -> PathBuf {
    PathBuf::from("grid").join(format!("alpha{alpha}_beta{beta}"))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default)]
pub struct TrainStageOptions {
    /// Stop after this many epochs; a later run resumes from the checkpoint.
    pub stop_after: Option<usize>,
}

pub fn cmd_train(cfg: &PipelineConfig, out: &Path) -> Result<StageRecord> {
    cmd_train_with(cfg, out, &TrainStageOptions::default())
}

/// Trains from scratch, or resumes when `checkpoint.bin` holds an
/// unfinished run of the same configuration.
pub fn cmd_train_with(cfg: &PipelineConfig, out: &Path, options: &TrainStageOptions) -> Result<StageRecord> {
    let run = || -> Result<StageRecord> {
        cfg.validate()?;
        match cfg.precision {
            Precision::F32 => train_stage::<f32>(cfg, out, options),
            Precision::F64 => train_stage::<f64>(cfg, out, options),
        }
    };
    run().map_err(|e| e.in_stage("train"))
}

struct Upstream {
    inputs: Inputs,
    signals: SignalMatrix,
    clusters: ClusterAssignment,
    cluster_file: ClusterFile,
    synth: SynthDetails,
    synth_record: StageRecord,
}

fn upstream(out: &Path) -> Result<Upstream> {
    let (synth_record, _) = StageRecord::find(out, "synth")?;
    let (cluster_rec, _) = StageRecord::find(out, "cluster")?;
    let mut inputs = Inputs::new();
    let signals = read_signals(&inputs.take(out, &synth_record, SIGNALS)?, Normalization::UnitRange)?;
    let cluster_file = ClusterFile::read(&inputs.take(out, &cluster_rec, CLUSTERS)?)?;
    let clusters = cluster_file.assignment()?;
    if clusters.n_dims() != signals.n_dims() {
        return Err(Error::Shape(format!(
            "partition covers {} dims, signals have {}",
            clusters.n_dims(),
            signals.n_dims()
        )));
    }
    Ok(Upstream { inputs, signals, clusters, cluster_file, synth: synth_details(&synth_record)?, synth_record })
}

fn train_stage<T: Real>(cfg: &PipelineConfig, out: &Path, options: &TrainStageOptions) -> Result<StageRecord> {
    create_dir(out)?;
    let mut up = upstream(out)?;
    // Alignment is tracked when the clusters are the scrambled patches.
    let local: Option<Vec<Permutation>> = if up.synth.variant == Variant::LocalPermuted
        && up.cluster_file.params.source == ClusterSource::Patches
    {
        let path = up.inputs.take(out, &up.synth_record, LOCAL_PERMUTATIONS)?;
        let maps: Vec<Vec<usize>> = read_json(&path)?;
        Some(maps.into_iter().map(Permutation::new).collect::<Result<_>>()?)
    } else {
        None
    };
    let ckpt = out.join(CHECKPOINT);
    let resume = if ckpt.exists() {
        match TrainState::<T>::load(&ckpt) {
            Ok(s) if s.meta.model == cfg.model && s.meta.train == cfg.train && s.meta.labels == up.clusters.labels() => {
                log::info!("train: resuming after epoch {}", s.meta.epochs_done);
                Some(s)
            }
            _ => {
                log::warn!("train: ignoring checkpoint from a different configuration");
                None
            }
        }
    } else {
        None
    };
    let mut hook = |rec: &mut EpochRecord, w: &Weights<T>| -> Result<()> {
        if let Some(perms) = &local {
            rec.metrics.insert("alignment".into(), alignment_metric(&w.so, perms)?);
        }
        Ok(())
    };
    let opts = TrainOptions {
        checkpoint: Some(ckpt),
        resume,
        stop_after: options.stop_after,
        on_epoch: Some(&mut hook),
        initial: None,
    };
    let state = train::<T>(&up.signals, &up.clusters, &cfg.model, &cfg.train, opts)?;
    // Covers runs with nothing left to do, which never reach a save.
    state.save(out.join(CHECKPOINT))?;
    write_history_csv(out.join(LOSSES), &state.meta.history)?;
    let details = serde_json::json!({
        "epochs_done": state.meta.epochs_done,
        "epochs": cfg.train.epochs,
        "final_loss": state.meta.history.last().map(|r| r.loss),
        "precision": cfg.precision,
    });
    finish(out, "train", cfg.seed, up.inputs, &[CHECKPOINT, LOSSES], details)
}

// ---------------------------------------------------------------- eval

/// Scores the learned representation per `[eval]`; writes `eval.json`
/// and `eval.csv`.
pub fn cmd_eval(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let run = || -> Result<EvalReport> {
        cfg.validate()?;
        match cfg.precision {
            Precision::F32 => eval_stage::<f32>(cfg, out),
            Precision::F64 => eval_stage::<f64>(cfg, out),
        }
    };
    run().map_err(|e| e.in_stage("eval"))
}

fn eval_stage<T: Real>(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    create_dir(out)?;
    let mut up = upstream(out)?;
    let train_labels = load_labels_csv(up.inputs.take(out, &up.synth_record, LABELS)?)?;
    let e = &cfg.eval;
    let classes = up.synth.classes;
    let mut report = match e.task {
        EvalTask::Kfold => {
            let ecc = if up.cluster_file.params.alpha != 0.0 {
                Some(read_eccentricity(&up.inputs.take(out, &up.synth_record, ECCENTRICITY)?)?)
            } else {
                None
            };
            let fixed = (up.cluster_file.params.source != ClusterSource::Spectral).then(|| up.clusters.clone());
            let pipeline = UrlostPipeline {
                bins: cfg.affinity.bins,
                cluster: cfg.cluster.params(up.cluster_file.params.alpha, up.cluster_file.params.beta, cfg.seed),
                model: cfg.model.clone(),
                // Fold refits run in double precision; the probe sees f64 either way.
                train: TrainConfig { precision: Precision::F64, ..cfg.train.clone() },
                eccentricity: ecc,
                fixed_clusters: fixed,
            };
            kfold_cv(&up.signals, &train_labels, e.k_folds, &pipeline, &e.probe, cfg.seed)?
        }
        EvalTask::Probe | EvalTask::PairDecode => {
            let params: Weights<T> = if e.untrained {
                Weights::init(&cfg.model, up.clusters.sizes(), cfg.seed)?
            } else {
                let (rec, _) = StageRecord::find(out, "train")?;
                let state = TrainState::<T>::load(up.inputs.take(out, &rec, CHECKPOINT)?)?;
                if state.meta.labels != up.clusters.labels() {
                    return Err(Error::InvalidConfig("checkpoint was trained on a different partition".into()));
                }
                state.params
            };
            if up.synth.n_test == 0 {
                return Err(Error::InvalidSplit("no test split; set test_source or test_fraction".into()));
            }
            let test = read_signals(&up.inputs.take(out, &up.synth_record, TEST_SIGNALS)?, Normalization::UnitRange)?;
            let test_labels = load_labels_csv(up.inputs.take(out, &up.synth_record, TEST_LABELS)?)?;
            let test_reps = encode(&test, &up.clusters, &params, &cfg.model)?.mapv(|v| v.f64());
            if e.task == EvalTask::Probe {
                let train_reps = encode(&up.signals, &up.clusters, &params, &cfg.model)?.mapv(|v| v.f64());
                let mut r = linear_probe(&train_reps, &train_labels, &test_reps, &test_labels, &e.probe)?;
                r.seed = cfg.seed;
                r.per_class.resize(classes.max(r.per_class.len()), None);
                r
            } else {
                if !up.synth.repeats {
                    return Err(Error::InvalidConfig("pair decoding needs a test split of repeated presentations".into()));
                }
                let half = test_reps.nrows() / 2;
                let first = test_reps.slice(ndarray::s![..half, ..]).to_owned();
                let second = test_reps.slice(ndarray::s![half.., ..]).to_owned();
                EvalReport {
                    task: "pair_decode".into(),
                    accuracy: pair_decoding_accuracy(&first, &second, e.similarity)?,
                    per_class: Vec::new(),
                    folds: Vec::new(),
                    n_test: half,
                    seed: cfg.seed,
                    config: serde_json::Value::Null,
                }
            }
        }
    };
    report.config = serde_json::json!({
        "variant": up.synth.variant,
        "source": up.cluster_file.params.source,
        "alpha": up.cluster_file.params.alpha,
        "beta": up.cluster_file.params.beta,
        "M": up.clusters.m(),
        "shared": cfg.model.shared,
        "untrained": e.untrained,
        "precision": cfg.precision,
        "eval": e,
    });
    report.write_json(out.join(EVAL_JSON))?;
    report.write_csv(out.join(EVAL_CSV))?;
    log::info!("eval: {} accuracy {:.4}", report.task, report.accuracy);
    finish(out, "eval", cfg.seed, up.inputs, &[EVAL_JSON, EVAL_CSV], serde_json::Value::Null)?;
    Ok(report)
}
