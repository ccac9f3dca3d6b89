//! Self-organizing layer and masked autoencoder over cluster tokens.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Block, Linear, MaeParams, ModelConfig, Params, SelfOrgWeights, Weights};
use super::tape::{NodeId, Tape};
use crate::error::{invalid, shape, Error, Result};
use crate::real::Real;
use crate::rng::{self, streams};
use crate::signal::SignalMatrix;
use crate::spectral::ClusterAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPattern {
    /// Masked cluster indices, ascending.
    pub masked: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

impl MaskPattern {
    /// Unmasked cluster indices, ascending.
    pub fn visible(&self, m: usize) -> Vec<usize> {
        let mut is_masked = vec![false; m];
        for &i in &self.masked {
            is_masked[i] = true;
        }
        (0..m).filter(|&i| !is_masked[i]).collect()
    }
}

/// `round(ratio * m)` with halves rounded up; must leave at least one
/// cluster on each side.
pub fn masked_count(m: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let n = (ratio * m as f64 + 0.5).floor() as usize;
    if n < 1 || n + 1 > m {
        return Err(invalid(format!("mask ratio {ratio} masks {n} of {m} clusters")));
    }
    Ok(n)
}

pub(crate) fn draw_subset(rng: &mut impl Rng, m: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    for k in 0..n {
        let j = rng.random_range(k..m);
        idx.swap(k, j);
    }
    let mut out = idx[..n].to_vec();
    out.sort_unstable();
    out
}

/// Uniformly random subset of `round(ratio * m)` clusters.
pub fn sample_mask(m: usize, ratio: f64, seed: u64) -> Result<MaskPattern> {
    let n = masked_count(m, ratio)?;
    let mut r = rng::stream(seed, streams::MASK);
    Ok(MaskPattern { masked: draw_subset(&mut r, m, n), ratio, seed })
}

/// Per-cluster input blocks: block `i` is `B x |cluster_i|`, columns in
/// ascending dimension order.
pub fn cluster_inputs<T: Real>(signals: &Array2<f64>, clusters: &ClusterAssignment) -> Result<Vec<Array2<T>>> {
    if signals.ncols() != clusters.n_dims() {
        return Err(shape(format!(
            "signals have {} dimensions, clusters cover {}",
            signals.ncols(),
            clusters.n_dims()
        )));
    }
    Ok(clusters
        .members()
        .iter()
        .map(|cols| signals.select(Axis(1), cols).mapv(T::of))
        .collect())
}

fn check_inputs<T>(inputs: &[Array2<T>], so: &SelfOrgWeights<Array2<T>>) -> Result<usize> {
    let rows = inputs.first().map_or(0, |x| x.nrows());
    for (i, x) in inputs.iter().enumerate() {
        let cols = so.cluster(i).w.ncols();
        if x.ncols() != cols {
            return Err(shape(format!("cluster {i} has {} values, projection expects {cols}", x.ncols())));
        }
        if x.nrows() != rows {
            return Err(shape(format!("cluster {i} has {} samples, expected {rows}", x.nrows())));
        }
    }
    if !so.shared && so.proj.len() != inputs.len() {
        return Err(shape(format!("{} clusters, {} projections", inputs.len(), so.proj.len())));
    }
    Ok(rows)
}

fn block<T: Real>(tape: &mut Tape<T>, x: NodeId, b: &Block<NodeId>, seq: usize, heads: usize) -> NodeId {
    let h = tape.layer_norm(x, b.ln1.gain, b.ln1.bias);
    let qkv = tape.linear(h, b.qkv.w, Some(b.qkv.b));
    let a = tape.attention(qkv, seq, heads);
    let a = tape.linear(a, b.proj.w, Some(b.proj.b));
    let x = tape.add(x, a);
    let h = tape.layer_norm(x, b.ln2.gain, b.ln2.bias);
    let f = tape.linear(h, b.fc1.w, Some(b.fc1.b));
    let f = tape.gelu(f);
    let f = tape.linear(f, b.fc2.w, Some(b.fc2.b));
    tape.add(x, f)
}

/// Runs a block stack, then the closing norm when the stack is nonempty.
fn stack<T: Real>(
    tape: &mut Tape<T>,
    mut x: NodeId,
    blocks: &[Block<NodeId>],
    norm: &super::params::Norm<NodeId>,
    seq: usize,
    heads: usize,
    label: &str,
) -> Result<NodeId> {
    for (l, b) in blocks.iter().enumerate() {
        x = block(tape, x, b, seq, heads);
        if tape.value(x).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite activation in {label} block {l}")));
        }
    }
    if !blocks.is_empty() {
        x = tape.layer_norm(x, norm.gain, norm.bias);
    }
    Ok(x)
}

/// Tokens `(B*M) x d`, row `b*M + i` = `W_i x_i[b] + b_i`.
fn so_graph<T: Real>(tape: &mut Tape<T>, so: &SelfOrgWeights<NodeId>, inputs: &[Array2<T>]) -> NodeId {
    let parts = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let xi = tape.leaf(x.clone());
            let l: &Linear<NodeId> = so.cluster(i);
            tape.linear(xi, l.w, Some(l.b))
        })
        .collect();
    tape.interleave(parts)
}

/// Graph handles for one masked forward pass.
struct MaskedGraph {
    /// Per cluster: (sample indices where it is masked, prediction node).
    predictions: Vec<Option<(Vec<usize>, NodeId)>>,
    encoded: NodeId,
}

fn masked_graph<T: Real>(
    tape: &mut Tape<T>,
    mae: &MaeParams<NodeId>,
    config: &ModelConfig,
    z0: NodeId,
    m: usize,
    masks: &[MaskPattern],
) -> Result<MaskedGraph> {
    let batch = masks.len();
    let n_masked = masks.first().map_or(0, |p| p.masked.len());
    if n_masked == 0 || n_masked >= m || masks.iter().any(|p| p.masked.len() != n_masked) {
        return Err(invalid("every sample needs the same number of masked clusters, in [1, M-1]"));
    }
    let n_visible = m - n_masked;
    let mut visible_rows = Vec::with_capacity(batch * n_visible);
    let mut masked_samples: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (b, p) in masks.iter().enumerate() {
        if let Some(&i) = p.masked.iter().find(|&&i| i >= m) {
            return Err(invalid(format!("masked index {i} out of range for {m} clusters")));
        }
        visible_rows.extend(p.visible(m).into_iter().map(|i| b * m + i));
        for &i in &p.masked {
            masked_samples[i].push(b);
        }
    }

    let z = tape.add_tiled(z0, mae.encoder_pos);
    let z = tape.gather_rows(z, visible_rows.clone());
    let encoded = stack(tape, z, &mae.encoder, &mae.encoder_norm, n_visible, config.heads, "encoder")?;
    let a = tape.linear(encoded, mae.adapter.w, Some(mae.adapter.b));
    let full = tape.scatter(a, mae.mask_token, visible_rows, batch * m);
    let full = tape.add_tiled(full, mae.decoder_pos);
    let decoded = stack(tape, full, &mae.decoder, &mae.decoder_norm, m, config.heads, "decoder")?;

    let predictions = masked_samples
        .into_iter()
        .enumerate()
        .map(|(i, samples)| {
            if samples.is_empty() {
                return None;
            }
            let rows = samples.iter().map(|&b| b * m + i).collect();
            let g = tape.gather_rows(decoded, rows);
            let head = &mae.heads[i];
            Some((samples, tape.linear(g, head.w, Some(head.b))))
        })
        .collect();
    Ok(MaskedGraph { predictions, encoded })
}

fn loss_graph<T: Real>(
    tape: &mut Tape<T>,
    h: &Params<NodeId>,
    config: &ModelConfig,
    inputs: &[Array2<T>],
    masks: &[MaskPattern],
) -> Result<NodeId> {
    let m = inputs.len();
    let z0 = so_graph(tape, &h.so, inputs);
    let g = masked_graph(tape, &h.mae, config, z0, m, masks)?;
    let n_masked = masks[0].masked.len();
    let mut terms = Vec::new();
    for (i, pred) in g.predictions.into_iter().enumerate() {
        if let Some((samples, node)) = pred {
            let target = inputs[i].select(Axis(0), &samples);
            let scale = 1.0 / (inputs[i].ncols() * masks.len() * n_masked) as f64;
            terms.push(tape.squared_error(node, &target, T::of(scale)));
        }
    }
    Ok(tape.sum(terms))
}

fn register<T: Real>(tape: &mut Tape<T>, params: &Weights<T>) -> Params<NodeId> {
    params.map(&mut |t| tape.leaf(t.clone()))
}

/// Masked reconstruction loss of a batch and its gradient with respect to
/// every parameter. `inputs[i]` is cluster `i`'s `B x |cluster_i|` block;
/// `masks[b]` is sample `b`'s mask.
pub fn loss_and_gradients<T: Real>(
    params: &Weights<T>,
    config: &ModelConfig,
    inputs: &[Array2<T>],
    masks: &[MaskPattern],
) -> Result<(T, Weights<T>)> {
    let rows = check_inputs(inputs, &params.so)?;
    if rows != masks.len() {
        return Err(shape(format!("{rows} samples, {} masks", masks.len())));
    }
    let mut tape = Tape::new();
    let h = register(&mut tape, params);
    let loss = loss_graph(&mut tape, &h, config, inputs, masks)?;
    let grads = tape.backward(loss);
    let g = h.map(&mut |&id| grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(tape.value(id).dim())));
    Ok((tape.value(loss)[[0, 0]], g))
}

/// Loss only.
pub fn masked_loss<T: Real>(
    params: &Weights<T>,
    config: &ModelConfig,
    inputs: &[Array2<T>],
    masks: &[MaskPattern],
) -> Result<T> {
    check_inputs(inputs, &params.so)?;
    let mut tape = Tape::new();
    let h = register(&mut tape, params);
    let loss = loss_graph(&mut tape, &h, config, inputs, masks)?;
    Ok(tape.value(loss)[[0, 0]])
}

/// Tokens `z0` (M x d_model) of one sample.
pub fn so_layer_forward<T: Real>(clusters: &[ArrayView1<'_, T>], weights: &SelfOrgWeights<Array2<T>>) -> Result<Array2<T>> {
    let inputs: Vec<Array2<T>> = clusters.iter().map(|c| c.to_owned().insert_axis(Axis(0))).collect();
    check_inputs(&inputs, weights)?;
    let mut tape = Tape::new();
    let h = weights.map(&mut |t| tape.leaf(t.clone()));
    let z = so_graph(&mut tape, &h, &inputs);
    Ok(tape.value(z).clone())
}

#[derive(Debug, Clone)]
pub struct MaeOutput<T> {
    /// (cluster index, reconstruction) for each masked cluster, ascending.
    pub reconstructions: Vec<(usize, Array1<T>)>,
    /// Encoder outputs for the visible tokens, in ascending cluster order.
    pub encoded: Array2<T>,
}

/// Masked forward pass for one sample's tokens `z0` (M x d_model).
pub fn mae_forward<T: Real>(
    z0: &Array2<T>,
    mask: &MaskPattern,
    mae: &MaeParams<Array2<T>>,
    config: &ModelConfig,
) -> Result<MaeOutput<T>> {
    let m = mae.heads.len();
    if z0.dim() != (m, config.d_model) {
        return Err(shape(format!("z0 is {:?}, expected ({m}, {})", z0.dim(), config.d_model)));
    }
    let mut tape = Tape::new();
    let h = mae.map(&mut |t| tape.leaf(t.clone()));
    let z = tape.leaf(z0.clone());
    let g = masked_graph(&mut tape, &h, config, z, m, std::slice::from_ref(mask))?;
    let reconstructions = g
        .predictions
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|(_, node)| (i, tape.value(node).row(0).to_owned())))
        .collect();
    Ok(MaeOutput { reconstructions, encoded: tape.value(g.encoded).clone() })
}

/// Mean over masked clusters of each cluster's mean squared error.
/// `pred` and `target` are indexed by cluster; unmasked entries are ignored.
pub fn masked_mse<T: Real>(pred: &[Array1<T>], target: &[Array1<T>], mask: &MaskPattern) -> Result<T> {
    if mask.masked.is_empty() {
        return Err(invalid("empty mask"));
    }
    let mut total = T::zero();
    for &i in &mask.masked {
        let (p, t) = match (pred.get(i), target.get(i)) {
            (Some(p), Some(t)) if p.len() == t.len() && !p.is_empty() => (p, t),
            _ => return Err(shape(format!("cluster {i}: missing or mismatched prediction"))),
        };
        let se = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
        total += se / T::of(p.len() as f64);
    }
    Ok(total / T::of(mask.masked.len() as f64))
}

const ENCODE_BATCH: usize = 256;

/// Unmasked encoder outputs mean-pooled over tokens, N x d_model.
pub fn encode<T: Real>(
    signals: &SignalMatrix,
    clusters: &ClusterAssignment,
    params: &Weights<T>,
    config: &ModelConfig,
) -> Result<Array2<T>> {
    let all = cluster_inputs::<T>(signals.values(), clusters)?;
    check_inputs(&all, &params.so)?;
    let m = all.len();
    if params.mae.heads.len() != m {
        return Err(shape(format!("{m} clusters, model built for {}", params.mae.heads.len())));
    }
    let n = signals.n_samples();
    let mut out = Array2::zeros((n, config.d_model));
    for start in (0..n).step_by(ENCODE_BATCH) {
        let end = (start + ENCODE_BATCH).min(n);
        let inputs: Vec<Array2<T>> = all
            .iter()
            .map(|x| x.slice(ndarray::s![start..end, ..]).to_owned())
            .collect();
        let mut tape = Tape::new();
        let h = register(&mut tape, params);
        let z = so_graph(&mut tape, &h.so, &inputs);
        let z = tape.add_tiled(z, h.mae.encoder_pos);
        let e = stack(&mut tape, z, &h.mae.encoder, &h.mae.encoder_norm, m, config.heads, "encoder")?;
        let pooled = tape.mean_pool(e, m);
        out.slice_mut(ndarray::s![start..end, ..]).assign(tape.value(pooled));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(depth: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_depth: depth,
            decoder_depth: depth,
            heads: 2,
            d_decoder: 8,
            mlp_ratio: 2,
            shared: false,
        }
    }

    #[test]
    fn mask_sizes() {
        assert_eq!(sample_mask(8, 0.75, 1).unwrap().masked.len(), 6);
        assert_eq!(masked_count(4, 0.625).unwrap(), 3);
        assert_eq!(masked_count(2, 0.25).unwrap(), 1);
        assert!(masked_count(4, 0.1).is_err());
        assert!(masked_count(4, 0.9).is_err());
        assert_eq!(sample_mask(10, 0.5, 3).unwrap(), sample_mask(10, 0.5, 3).unwrap());
        let p = sample_mask(6, 0.5, 3).unwrap();
        assert_eq!(p.visible(6).len(), 3);
    }

    #[test]
    fn so_layer_hand_product() {
        let w = SelfOrgWeights {
            proj: vec![
                Linear { w: array![[1.0, 2.0], [0.0, 1.0]], b: Array2::zeros((1, 2)) },
                Linear { w: Array2::eye(2), b: array![[0.5, 0.5]] },
            ],
            shared: false,
        };
        let x0 = array![3.0, 4.0];
        let x1 = array![1.0, 2.0];
        let z = so_layer_forward(&[x0.view(), x1.view()], &w).unwrap();
        assert_eq!(z, array![[11.0, 4.0], [1.5, 2.5]]);
        let bad = array![1.0];
        assert!(matches!(so_layer_forward(&[x0.view(), bad.view()], &w), Err(Error::Shape(m)) if m.contains("cluster 1")));
    }

    #[test]
    fn masked_mse_weighting() {
        let pred = vec![array![1.0, 1.0], Array1::from_elem(6, 0.0), array![5.0]];
        let target = vec![array![0.0, 2.0], Array1::from_elem(6, 0.5), array![-3.0]];
        let mask = MaskPattern { masked: vec![0, 1], ratio: 0.5, seed: 0 };
        let v: f64 = masked_mse(&pred, &target, &mask).unwrap();
        assert!((v - (1.0 + 0.25) / 2.0).abs() < 1e-15);
        let empty = MaskPattern { masked: vec![], ratio: 0.5, seed: 0 };
        assert!(masked_mse(&pred, &target, &empty).is_err());
    }

    #[test]
    fn collapsed_architecture() {
        let sizes = [2, 3, 1, 2];
        let cfg = tiny(0);
        let mut p = Weights::<f64>::init(&cfg, &sizes, 3).unwrap();
        p.mae.adapter.w = Array2::eye(8);
        let z0 = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64 * 0.1);
        let mask = MaskPattern { masked: vec![1, 3], ratio: 0.5, seed: 0 };
        let out = mae_forward(&z0, &mask, &p.mae, &cfg).unwrap();
        assert_eq!(out.reconstructions.len(), 2);
        for (i, r) in &out.reconstructions {
            let token = &p.mae.mask_token.row(0) + &p.mae.decoder_pos.row(*i);
            let expected = p.mae.heads[*i].w.dot(&token) + p.mae.heads[*i].b.row(0);
            for (a, b) in r.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        // Independent of visible tokens.
        let mut z1 = z0.clone();
        z1.row_mut(0).fill(9.0);
        let again = mae_forward(&z1, &mask, &p.mae, &cfg).unwrap();
        assert_eq!(again.reconstructions, out.reconstructions);
    }

    #[test]
    fn zero_network_returns_head_bias() {
        let sizes = [2, 3];
        let cfg = tiny(1);
        let p = Weights::<f64>::init(&cfg, &sizes, 3).unwrap();
        let mut mae = p.mae.map(&mut |t| Array2::<f64>::zeros(t.dim()));
        mae.heads[1].b = array![[1.0, -2.0, 3.0]];
        let mask = MaskPattern { masked: vec![1], ratio: 0.5, seed: 0 };
        let out = mae_forward(&Array2::ones((2, 8)), &mask, &mae, &cfg).unwrap();
        assert_eq!(out.reconstructions, vec![(1, array![1.0, -2.0, 3.0])]);
    }

    #[test]
    fn unmasked_heads_get_no_gradient() {
        let sizes = [2, 3, 1, 2];
        let cfg = tiny(1);
        let p = Weights::<f64>::init(&cfg, &sizes, 3).unwrap();
        let inputs: Vec<Array2<f64>> = sizes.iter().map(|&s| Array2::from_elem((2, s), 0.3)).collect();
        let masks = vec![
            MaskPattern { masked: vec![0, 2], ratio: 0.5, seed: 0 },
            MaskPattern { masked: vec![0, 2], ratio: 0.5, seed: 0 },
        ];
        let (_, g) = loss_and_gradients(&p, &cfg, &inputs, &masks).unwrap();
        for i in [1, 3] {
            assert!(g.mae.heads[i].w.iter().all(|&v| v == 0.0));
            assert!(g.mae.heads[i].b.iter().all(|&v| v == 0.0));
        }
        assert!(g.mae.heads[0].w.iter().any(|&v| v != 0.0));
    }
}
