//! AdamW training loop, learning-rate schedule and checkpoints.
//!
//! Every epoch draws its sample order and masks from generators keyed by
//! `(seed, epoch)`, so resuming from a checkpoint replays exactly the run
//! that was interrupted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::mae::{cluster_inputs, draw_subset, loss_and_gradients, masked_count, MaskPattern};
use super::params::{decays, ModelConfig, Weights};
use crate::error::{invalid, Error, Result};
use crate::io::{write_atomic, Reader};
use crate::real::{Precision, Real};
use crate::rng::{self, streams};
use crate::signal::SignalMatrix;
use crate::spectral::ClusterAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    /// Absolute learning rate; when absent, `1.5e-4 * batch_size / 256`.
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            batch_size: 64,
            epochs: 20,
            warmup_epochs: 2,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn base_lr(&self) -> f64 {
        self.learning_rate
            .unwrap_or(1.5e-4 * self.batch_size as f64 / 256.0)
    }

    /// Learning rate at fractional epoch `t`: linear warmup, then half-cosine
    /// decay to zero at the last epoch.
    pub fn lr_at(&self, t: f64) -> f64 {
        let base = self.base_lr();
        let w = self.warmup_epochs as f64;
        let e = self.epochs as f64;
        if t < w {
            base * t / w
        } else if e > w {
            base * 0.5 * (1.0 + (std::f64::consts::PI * (t - w) / (e - w)).cos())
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.base_lr() >= 0.0) || !self.base_lr().is_finite() {
            return bad("learning rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam moments need beta in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean masked loss over the epoch's samples.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Extra per-epoch diagnostics added by an epoch hook.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

/// Configuration echo and progress stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub labels: Vec<usize>,
    pub clusters: usize,
    pub epochs_done: usize,
    pub step: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub meta: TrainMeta,
    pub params: Weights<T>,
    pub adam_m: Weights<T>,
    pub adam_v: Weights<T>,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"URLC";
pub const CHECKPOINT_VERSION: u32 = 1;

impl<T: Real> TrainState<T> {
    fn fresh(model: &ModelConfig, train: &TrainConfig, clusters: &ClusterAssignment) -> Result<Self> {
        let params = Weights::init(model, clusters.sizes(), train.seed)?;
        Ok(Self {
            meta: TrainMeta {
                model: model.clone(),
                train: train.clone(),
                labels: clusters.labels().to_vec(),
                clusters: clusters.m(),
                epochs_done: 0,
                step: 0,
                history: Vec::new(),
            },
            adam_m: params.zeros_like(),
            adam_v: params.zeros_like(),
            params,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::PRECISION.tag());
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let groups = [("param", &self.params), ("adam_m", &self.adam_m), ("adam_v", &self.adam_v)];
        let count: usize = groups.iter().map(|(_, w)| w.named().len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, w) in groups {
            for (name, t) in w.named() {
                let name = format!("{prefix}/{name}");
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
                out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
                for v in t.iter() {
                    v.write_le(&mut out);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let tag = r.u8()?;
        if Precision::from_tag(tag) != Some(T::PRECISION) {
            return Err(format!("element tag {tag} does not match requested precision {:?}", T::PRECISION));
        }
        let len = r.u32()? as usize;
        let meta: TrainMeta = serde_json::from_slice(r.take(len)?).map_err(|e| e.to_string())?;
        let sizes = ClusterAssignment::from_labels(&meta.labels, meta.clusters)
            .map_err(|e| e.to_string())?
            .sizes()
            .to_vec();
        let template = Weights::<T>::init(&meta.model, &sizes, 0).map_err(|e| e.to_string())?;
        let count = r.u32()? as usize;
        let mut tensors = std::collections::HashMap::with_capacity(count);
        let width = std::mem::size_of::<T>();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| e.to_string())?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let payload = r.take(rows.checked_mul(cols).and_then(|k| k.checked_mul(width)).ok_or("overflow")?)?;
            let values = payload.chunks_exact(width).map(T::read_le).collect();
            let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())?;
            tensors.insert(name, t);
        }
        if r.remaining() != 0 {
            return Err(format!("{} trailing bytes", r.remaining()));
        }
        let mut fill = |prefix: &str| -> std::result::Result<Weights<T>, String> {
            let mut w = template.clone();
            let names: Vec<String> = template.named().into_iter().map(|(n, _)| n).collect();
            let mut k = 0;
            let mut err = None;
            w.for_each_mut(&mut |slot| {
                let key = format!("{prefix}/{}", names[k]);
                k += 1;
                match tensors.remove(&key) {
                    Some(t) if t.dim() == slot.dim() => *slot = t,
                    Some(t) => err = Some(format!("{key}: shape {:?}, expected {:?}", t.dim(), slot.dim())),
                    None => err = Some(format!("missing tensor {key}")),
                }
            });
            err.map_or(Ok(w), Err)
        };
        let params = fill("param")?;
        let adam_m = fill("adam_m")?;
        let adam_v = fill("adam_v")?;
        if let Some(extra) = tensors.keys().next() {
            return Err(format!("unexpected tensor {extra}"));
        }
        Ok(Self { meta, params, adam_m, adam_v })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::MalformedFile { path: path.to_path_buf(), reason })
    }

    pub fn clusters(&self) -> Result<ClusterAssignment> {
        ClusterAssignment::from_labels(&self.meta.labels, self.meta.clusters)
    }
}

/// Called after each epoch's updates, before the record is stored; it may
/// add entries to `metrics`.
pub type EpochHook<'a, T> = &'a mut dyn FnMut(&mut EpochRecord, &Weights<T>) -> Result<()>;

#[derive(Default)]
pub struct TrainOptions<'a, T> {
    /// Rewritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<TrainState<T>>,
    /// Stop once this many epochs are complete (the schedule still follows
    /// `epochs`).
    pub stop_after: Option<usize>,
    pub on_epoch: Option<EpochHook<'a, T>>,
    /// Replaces the seeded initialization.
    pub initial: Option<Weights<T>>,
}

fn adamw_step<T: Real>(state: &mut TrainState<T>, grads: &Weights<T>, lr: f64, cfg: &TrainConfig) {
    state.meta.step += 1;
    let t = state.meta.step as i32;
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    let wd = T::of(cfg.weight_decay);
    let named = grads.named();
    let mut ms: Vec<Array2<T>> = Vec::with_capacity(named.len());
    let mut vs: Vec<Array2<T>> = Vec::with_capacity(named.len());
    state.adam_m.for_each_mut(&mut |m| ms.push(std::mem::take(m)));
    state.adam_v.for_each_mut(&mut |v| vs.push(std::mem::take(v)));
    let mut k = 0;
    state.params.for_each_mut(&mut |p| {
        let (name, g) = &named[k];
        let decay = if decays(name) { wd } else { T::zero() };
        Zip::from(&mut *p)
            .and(&mut ms[k])
            .and(&mut vs[k])
            .and(*g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps) + decay * *p;
                *p = *p - lr * update;
            });
        k += 1;
    });
    let mut ms = ms.into_iter();
    let mut vs = vs.into_iter();
    state.adam_m.for_each_mut(&mut |m| *m = ms.next().expect("moment"));
    state.adam_v.for_each_mut(&mut |v| *v = vs.next().expect("moment"));
}

/// Trains the self-organizing layer and masked autoencoder jointly.
/// Returns the final state; its `meta.history` is the per-epoch loss curve.
pub fn train<T: Real>(
    signals: &SignalMatrix,
    clusters: &ClusterAssignment,
    model: &ModelConfig,
    config: &TrainConfig,
    mut options: TrainOptions<'_, T>,
) -> Result<TrainState<T>> {
    config.validate()?;
    if config.precision != T::PRECISION {
        return Err(Error::InvalidConfig(format!(
            "config asks for {:?}, training in {:?}",
            config.precision,
            T::PRECISION
        )));
    }
    let m = clusters.m();
    let n_masked = masked_count(m, config.mask_ratio)?;
    let all = cluster_inputs::<T>(signals.values(), clusters)?;
    let n = signals.n_samples();
    if n == 0 {
        return Err(invalid("no training samples"));
    }

    let mut state = match options.resume.take() {
        Some(s) => {
            if s.meta.model != *model || s.meta.train != *config || s.meta.labels != clusters.labels() {
                return Err(Error::InvalidConfig("checkpoint was written by a different configuration".into()));
            }
            s
        }
        None => {
            let mut s = TrainState::fresh(model, config, clusters)?;
            if let Some(w) = options.initial.take() {
                if w.named().iter().map(|(_, t)| t.dim()).ne(s.params.named().iter().map(|(_, t)| t.dim())) {
                    return Err(invalid("initial weights do not match the model configuration"));
                }
                s.params = w;
            }
            s
        }
    };

    let steps = n.div_ceil(config.batch_size);
    let last = options.stop_after.unwrap_or(config.epochs).min(config.epochs);
    while state.meta.epochs_done < last {
        let epoch = state.meta.epochs_done;
        let mut order: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::substream(config.seed, streams::SHUFFLE, epoch as u64), &mut order);
        let mut mask_rng = rng::substream(config.seed, streams::MASK, epoch as u64);
        let mut total = 0.0;
        let mut lr = 0.0;
        for (s, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<Array2<T>> = all.iter().map(|x| x.select(Axis(0), batch)).collect();
            let masks: Vec<MaskPattern> = batch
                .iter()
                .map(|_| MaskPattern {
                    masked: draw_subset(&mut mask_rng, m, n_masked),
                    ratio: config.mask_ratio,
                    seed: config.seed,
                })
                .collect();
            let (loss, grads) = loss_and_gradients(&state.params, model, &inputs, &masks)?;
            let loss = loss.f64();
            if !loss.is_finite() {
                return Err(diverged(epoch + 1, format!("loss {loss} at step {s}"), &options.checkpoint));
            }
            total += loss * batch.len() as f64;
            lr = config.lr_at(epoch as f64 + s as f64 / steps as f64);
            adamw_step(&mut state, &grads, lr, config);
        }
        if !state.params.is_finite() {
            return Err(diverged(epoch + 1, "non-finite parameters".into(), &options.checkpoint));
        }
        let mut record = EpochRecord { epoch: epoch + 1, loss: total / n as f64, lr, metrics: BTreeMap::new() };
        if let Some(hook) = options.on_epoch.as_mut() {
            hook(&mut record, &state.params)?;
        }
        log::info!("epoch {} loss {:.6} lr {:.3e}", record.epoch, record.loss, record.lr);
        state.meta.epochs_done += 1;
        state.meta.history.push(record);
        if let Some(path) = &options.checkpoint {
            state.save(path)?;
        }
    }
    Ok(state)
}

fn diverged(epoch: usize, reason: String, checkpoint: &Option<PathBuf>) -> Error {
    let reason = match checkpoint {
        Some(p) if p.exists() => format!("{reason}; last good checkpoint {}", p.display()),
        _ => format!("{reason}; no checkpoint written"),
    };
    Error::Diverged { epoch, reason }
}

/// Writes `epoch,loss,lr` plus one column per metric name seen in any
/// record, blank where a record lacks it.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let names: std::collections::BTreeSet<&String> = history.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch", "loss", "lr"];
    header.extend(names.iter().map(|n| n.as_str()));
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![r.epoch.to_string(), r.loss.to_string(), r.lr.to_string()];
        row.extend(names.iter().map(|n| r.metrics.get(*n).map_or(String::new(), |x| x.to_string())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let c = TrainConfig { learning_rate: Some(1.0), epochs: 10, warmup_epochs: 2, ..Default::default() };
        assert_eq!(c.lr_at(0.0), 0.0);
        assert!((c.lr_at(1.0) - 0.5).abs() < 1e-15);
        assert!((c.lr_at(2.0) - 1.0).abs() < 1e-15);
        assert!((c.lr_at(6.0) - 0.5).abs() < 1e-12);
        assert!(c.lr_at(10.0).abs() < 1e-15);
        let d = TrainConfig { batch_size: 512, ..Default::default() };
        assert!((d.base_lr() - 3e-4).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { mask_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
