//! Parameter containers.
//!
//! The containers are generic over the tensor slot `P`: `Array2<T>` for
//! values and gradients, [`NodeId`](super::tape::NodeId) for the handles
//! registered on a tape. `map` converts between them, `visit` walks the
//! slots in a fixed order with stable names (used by the optimizer and the
//! checkpoint format).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{self, streams};

type Visit<'a, 'b, P> = &'b mut dyn FnMut(String, &'a P);
type VisitMut<'b, P> = &'b mut dyn FnMut(&mut P);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub d_decoder: usize,
    pub mlp_ratio: usize,
    /// Tie every cluster's projection to one matrix (clusters must be of
    /// equal size).
    pub shared: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            encoder_depth: 4,
            decoder_depth: 2,
            heads: 4,
            d_decoder: 64,
            mlp_ratio: 4,
            shared: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, sizes: &[usize]) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.d_decoder == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return bad("model widths, heads and mlp_ratio must be positive".into());
        }
        if self.d_model % self.heads != 0 || self.d_decoder % self.heads != 0 {
            return bad(format!(
                "d_model {} and d_decoder {} must be divisible by heads {}",
                self.d_model, self.d_decoder, self.heads
            ));
        }
        if sizes.len() < 2 {
            return bad(format!("need at least 2 clusters, got {}", sizes.len()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return bad(format!("cluster {i} is empty"));
        }
        if self.shared && sizes.iter().any(|&s| s != sizes[0]) {
            return bad("shared projection requires equal cluster sizes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    /// out x in
    pub w: P,
    /// 1 x out
    pub b: P,
}

impl<P> Linear<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Linear<Q> {
        Linear { w: f(&self.w), b: f(&self.b) }
    }
    fn visit<'a>(&'a self, name: &str, f: Visit<'a, '_, P>) {
        f(format!("{name}.w"), &self.w);
        f(format!("{name}.b"), &self.b);
    }
    fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

impl<P> Norm<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Norm<Q> {
        Norm { gain: f(&self.gain), bias: f(&self.bias) }
    }
    fn visit<'a>(&'a self, name: &str, f: Visit<'a, '_, P>) {
        f(format!("{name}.gain"), &self.gain);
        f(format!("{name}.bias"), &self.bias);
    }
    fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<P> {
    pub ln1: Norm<P>,
    pub qkv: Linear<P>,
    pub proj: Linear<P>,
    pub ln2: Norm<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

impl<P> Block<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Block<Q> {
        Block {
            ln1: self.ln1.map(f),
            qkv: self.qkv.map(f),
            proj: self.proj.map(f),
            ln2: self.ln2.map(f),
            fc1: self.fc1.map(f),
            fc2: self.fc2.map(f),
        }
    }
    fn visit<'a>(&'a self, name: &str, f: Visit<'a, '_, P>) {
        self.ln1.visit(&format!("{name}.ln1"), f);
        self.qkv.visit(&format!("{name}.qkv"), f);
        self.proj.visit(&format!("{name}.proj"), f);
        self.ln2.visit(&format!("{name}.ln2"), f);
        self.fc1.visit(&format!("{name}.fc1"), f);
        self.fc2.visit(&format!("{name}.fc2"), f);
    }
    fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        self.ln1.visit_mut(f);
        self.qkv.visit_mut(f);
        self.proj.visit_mut(f);
        self.ln2.visit_mut(f);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Per-cluster projections `token_i = W_i x_i + b_i`. In shared mode
/// `proj` holds a single projection used by every cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfOrgWeights<P> {
    pub proj: Vec<Linear<P>>,
    pub shared: bool,
}

impl<P> SelfOrgWeights<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> SelfOrgWeights<Q> {
        SelfOrgWeights {
            proj: self.proj.iter().map(|l| l.map(f)).collect(),
            shared: self.shared,
        }
    }

    /// Projection applied to cluster `i`.
    pub fn cluster(&self, i: usize) -> &Linear<P> {
        if self.shared {
            &self.proj[0]
        } else {
            &self.proj[i]
        }
    }

    fn visit<'a>(&'a self, f: Visit<'a, '_, P>) {
        for (i, l) in self.proj.iter().enumerate() {
            l.visit(&format!("so.{i}"), f);
        }
    }
    fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        for l in &mut self.proj {
            l.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeParams<P> {
    /// M x d_model
    pub encoder_pos: P,
    pub encoder: Vec<Block<P>>,
    pub encoder_norm: Norm<P>,
    pub adapter: Linear<P>,
    /// 1 x d_decoder
    pub mask_token: P,
    /// M x d_decoder
    pub decoder_pos: P,
    pub decoder: Vec<Block<P>>,
    pub decoder_norm: Norm<P>,
    /// Head `i` maps a decoder token to cluster `i`'s values.
    pub heads: Vec<Linear<P>>,
}

impl<P> MaeParams<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> MaeParams<Q> {
        MaeParams {
            encoder_pos: f(&self.encoder_pos),
            encoder: self.encoder.iter().map(|b| b.map(f)).collect(),
            encoder_norm: self.encoder_norm.map(f),
            adapter: self.adapter.map(f),
            mask_token: f(&self.mask_token),
            decoder_pos: f(&self.decoder_pos),
            decoder: self.decoder.iter().map(|b| b.map(f)).collect(),
            decoder_norm: self.decoder_norm.map(f),
            heads: self.heads.iter().map(|h| h.map(f)).collect(),
        }
    }

    fn visit<'a>(&'a self, f: Visit<'a, '_, P>) {
        f("encoder_pos".into(), &self.encoder_pos);
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("encoder.{i}"), f);
        }
        self.encoder_norm.visit("encoder_norm", f);
        self.adapter.visit("adapter", f);
        f("mask_token".into(), &self.mask_token);
        f("decoder_pos".into(), &self.decoder_pos);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("decoder.{i}"), f);
        }
        self.decoder_norm.visit("decoder_norm", f);
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&format!("head.{i}"), f);
        }
    }

    fn visit_mut(&mut self, f: VisitMut<'_, P>) {
        f(&mut self.encoder_pos);
        for b in &mut self.encoder {
            b.visit_mut(f);
        }
        self.encoder_norm.visit_mut(f);
        self.adapter.visit_mut(f);
        f(&mut self.mask_token);
        f(&mut self.decoder_pos);
        for b in &mut self.decoder {
            b.visit_mut(f);
        }
        self.decoder_norm.visit_mut(f);
        for h in &mut self.heads {
            h.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<P> {
    pub so: SelfOrgWeights<P>,
    pub mae: MaeParams<P>,
}

impl<P> Params<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Params<Q> {
        Params { so: self.so.map(f), mae: self.mae.map(f) }
    }

    /// Every slot with its name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.so.visit(&mut |n, p| out.push((n, p)));
        self.mae.visit(&mut |n, p| out.push((n, p)));
        out
    }

    /// Visits mutable slots in the same order as [`named`](Self::named).
    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        self.so.visit_mut(f);
        self.mae.visit_mut(f);
    }
}

/// Whether a named tensor receives weight decay: linear weights only.
pub fn decays(name: &str) -> bool {
    name.ends_with(".w")
}

pub type Weights<T> = Params<Array2<T>>;

struct Init<R> {
    rng: R,
}

impl<R: rand::Rng> Init<R> {
    fn trunc<T: Real>(&mut self, rows: usize, cols: usize) -> Array2<T> {
        Array2::from_shape_fn((rows, cols), |_| T::of(rng::truncated_normal(&mut self.rng, 0.02)))
    }
    fn normal<T: Real>(&mut self, rows: usize, cols: usize) -> Array2<T> {
        Array2::from_shape_fn((rows, cols), |_| T::of(0.02 * rng::normal(&mut self.rng)))
    }
    fn linear<T: Real>(&mut self, out: usize, inp: usize) -> Linear<Array2<T>> {
        Linear { w: self.trunc(out, inp), b: Array2::zeros((1, out)) }
    }
    fn block<T: Real>(&mut self, d: usize, ratio: usize) -> Block<Array2<T>> {
        Block {
            ln1: norm(d),
            qkv: self.linear(3 * d, d),
            proj: self.linear(d, d),
            ln2: norm(d),
            fc1: self.linear(ratio * d, d),
            fc2: self.linear(d, ratio * d),
        }
    }
}

fn norm<T: Real>(d: usize) -> Norm<Array2<T>> {
    Norm { gain: Array2::ones((1, d)), bias: Array2::zeros((1, d)) }
}

impl<T: Real> Weights<T> {
    /// Seeded initialization: truncated normal (std 0.02) for linear
    /// weights, N(0, 0.02^2) for positional embeddings and the mask token,
    /// zeros for biases, unit gains.
    pub fn init(config: &ModelConfig, sizes: &[usize], seed: u64) -> Result<Self> {
        config.validate(sizes)?;
        let mut init = Init { rng: rng::stream(seed, streams::PARAM_INIT) };
        let (d, dd, m) = (config.d_model, config.d_decoder, sizes.len());
        let proj = if config.shared {
            vec![init.linear(d, sizes[0])]
        } else {
            sizes.iter().map(|&s| init.linear(d, s)).collect()
        };
        let so = SelfOrgWeights { proj, shared: config.shared };
        let encoder_pos = init.normal(m, d);
        let encoder = (0..config.encoder_depth).map(|_| init.block(d, config.mlp_ratio)).collect();
        let adapter = init.linear(dd, d);
        let mask_token = init.normal(1, dd);
        let decoder_pos = init.normal(m, dd);
        let decoder = (0..config.decoder_depth).map(|_| init.block(dd, config.mlp_ratio)).collect();
        let heads = sizes.iter().map(|&s| init.linear(s, dd)).collect();
        let mae = MaeParams {
            encoder_pos,
            encoder,
            encoder_norm: norm(d),
            adapter,
            mask_token,
            decoder_pos,
            decoder,
            decoder_norm: norm(dd),
            heads,
        };
        Ok(Params { so, mae })
    }

    /// Zero tensors of matching shapes.
    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t| Array2::zeros(t.dim()))
    }

    /// Cluster sizes implied by the output heads.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.mae.heads.iter().map(|h| h.w.nrows()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_depth: 1,
            decoder_depth: 1,
            heads: 2,
            d_decoder: 4,
            mlp_ratio: 2,
            shared: false,
        }
    }

    #[test]
    fn shapes_and_names() {
        let p = Weights::<f64>::init(&tiny(), &[2, 3, 1], 0).unwrap();
        assert_eq!(p.so.proj[1].w.dim(), (8, 3));
        assert_eq!(p.mae.heads[1].w.dim(), (3, 4));
        assert_eq!(p.mae.encoder_pos.dim(), (3, 8));
        assert_eq!(p.mae.decoder_pos.dim(), (3, 4));
        assert_eq!(p.cluster_sizes(), vec![2, 3, 1]);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "so.0.w");
        assert!(names.contains(&"encoder.0.qkv.w".to_string()));
        assert_eq!(names.last().unwrap(), "head.2.b");
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn mutable_order_follows_names() {
        let mut p = Weights::<f64>::init(&tiny(), &[2, 3], 1).unwrap();
        let shapes: Vec<_> = p.named().iter().map(|(_, t)| t.dim()).collect();
        let mut seen = Vec::new();
        p.for_each_mut(&mut |t| seen.push(t.dim()));
        assert_eq!(seen, shapes);
    }

    #[test]
    fn init_is_seeded() {
        let a = Weights::<f64>::init(&tiny(), &[2, 3], 5).unwrap();
        let b = Weights::<f64>::init(&tiny(), &[2, 3], 5).unwrap();
        let c = Weights::<f64>::init(&tiny(), &[2, 3], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.so.proj[0].w.iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn shared_requires_equal_sizes() {
        let cfg = ModelConfig { shared: true, ..tiny() };
        assert!(Weights::<f64>::init(&cfg, &[2, 3], 0).is_err());
        let p = Weights::<f64>::init(&cfg, &[3, 3], 0).unwrap();
        assert_eq!(p.so.proj.len(), 1);
    }
}
