//! Reverse-mode differentiation over row-major 2-D arrays.
//!
//! A [`Tape`] records each operation as it is evaluated. Token sequences are
//! stored flat: a batch of `B` sequences of length `S` with width `d` is a
//! `(B*S) x d` array whose row `b*S + s` is token `s` of sample `b`.
//! Shape errors in the ops are programming errors and panic; public model
//! functions validate shapes before building a graph.

use ndarray::{s, Array2, Axis, Zip};

use crate::real::Real;

pub type NodeId = usize;

const LN_EPS: f64 = 1e-6;

enum Op<T> {
    Leaf,
    /// `x w^T + b`
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    /// Row `r` of `x` plus row `r % P` of a `P`-row table.
    AddTiled { x: NodeId, table: NodeId },
    GatherRows { x: NodeId, rows: Vec<usize> },
    /// Output row `rows[j]` is row `j` of `src`; all other rows are `token`.
    Scatter { src: NodeId, token: NodeId, rows: Vec<usize> },
    /// `M` parts of `B x d` into `(B*M) x d`, row `b*M + i` from part `i`.
    Interleave(Vec<NodeId>),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    Gelu(NodeId),
    Attention {
        qkv: NodeId,
        seq: usize,
        heads: usize,
        probs: Vec<Array2<T>>,
    },
    MeanPool { x: NodeId, seq: usize },
    /// `scale * sum((pred - target)^2)` as a 1x1 value.
    SquaredError { pred: NodeId, diff: Array2<T>, scale: T },
    Sum(Vec<NodeId>),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::of(3.0) * k * x * x);
    (y, dy)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Parameters and constant inputs.
    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ncols(), wv.ncols(), "linear: input width vs weight columns");
        let mut y = xv.dot(&wv.t());
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.dim(), (1, wv.nrows()), "linear: bias shape");
            y += bv;
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn add_tiled(&mut self, x: NodeId, table: NodeId) -> NodeId {
        let mut y = self.value(x).clone();
        let t = self.value(table);
        let p = t.nrows();
        assert!(p > 0 && y.nrows() % p == 0 && y.ncols() == t.ncols(), "add_tiled: shape");
        for (r, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            row += &t.row(r % p);
        }
        self.push(y, Op::AddTiled { x, table })
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        let y = self.value(x).select(Axis(0), &rows);
        self.push(y, Op::GatherRows { x, rows })
    }

    pub fn scatter(&mut self, src: NodeId, token: NodeId, rows: Vec<usize>, total: usize) -> NodeId {
        let sv = self.value(src);
        let tv = self.value(token);
        assert_eq!(sv.nrows(), rows.len(), "scatter: row count");
        assert_eq!(tv.dim(), (1, sv.ncols()), "scatter: token shape");
        let mut y = Array2::zeros((total, sv.ncols()));
        y.assign(&tv.broadcast((total, sv.ncols())).unwrap());
        for (j, &r) in rows.iter().enumerate() {
            y.row_mut(r).assign(&sv.row(j));
        }
        self.push(y, Op::Scatter { src, token, rows })
    }

    pub fn interleave(&mut self, parts: Vec<NodeId>) -> NodeId {
        let m = parts.len();
        assert!(m > 0);
        let (b, d) = self.value(parts[0]).dim();
        let mut y = Array2::zeros((b * m, d));
        for (i, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            assert_eq!(pv.dim(), (b, d), "interleave: part {i} shape");
            y.slice_mut(s![i..;m, ..]).assign(pv);
        }
        self.push(y, Op::Interleave(parts))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let g = self.value(gain);
        let b = self.value(bias);
        assert_eq!(g.dim(), (1, d));
        assert_eq!(b.dim(), (1, d));
        let dn = T::of(d as f64);
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (row, mut out) in xv.axis_iter(Axis(0)).zip(xhat.axis_iter_mut(Axis(0))) {
            let mean = row.sum() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + T::of(LN_EPS)).sqrt();
            Zip::from(&mut out).and(&row).for_each(|o, &v| *o = (v - mean) * inv);
            inv_std.push(inv);
        }
        let y = &(&xhat * g) + b;
        self.push(y, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).mapv(|v| gelu_parts(v).0);
        self.push(y, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product self-attention. `qkv` is `(B*S) x 3d`
    /// with query, key and value blocks side by side; head `h` uses columns
    /// `h*dh..(h+1)*dh` of each block.
    pub fn attention(&mut self, qkv: NodeId, seq: usize, heads: usize) -> NodeId {
        let v = self.value(qkv);
        let (rows, w3) = v.dim();
        assert!(seq > 0 && rows % seq == 0 && w3 % 3 == 0);
        let d = w3 / 3;
        assert!(heads > 0 && d % heads == 0);
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let batch = rows / seq;
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r = b * seq..(b + 1) * seq;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let q = v.slice(s![r.clone(), c.clone()]);
                let k = v.slice(s![r.clone(), d + c.start..d + c.end]);
                let val = v.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
                let mut p = q.dot(&k.t()) * scale;
                for mut row in p.axis_iter_mut(Axis(0)) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    row.mapv_inplace(|x| (x - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                out.slice_mut(s![r.clone(), c]).assign(&p.dot(&val));
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { qkv, seq, heads, probs })
    }

    /// Mean over each group of `seq` consecutive rows.
    pub fn mean_pool(&mut self, x: NodeId, seq: usize) -> NodeId {
        let xv = self.value(x);
        assert!(seq > 0 && xv.nrows() % seq == 0);
        let b = xv.nrows() / seq;
        let inv = T::one() / T::of(seq as f64);
        let y = Array2::from_shape_fn((b, xv.ncols()), |(i, j)| {
            xv.slice(s![i * seq..(i + 1) * seq, j]).sum() * inv
        });
        self.push(y, Op::MeanPool { x, seq })
    }

    /// `scale * sum((pred - target)^2)`.
    pub fn squared_error(&mut self, pred: NodeId, target: &Array2<T>, scale: T) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.dim(), target.dim(), "squared_error: shape");
        let diff = pv - target;
        let total = diff.iter().map(|&v| v * v).sum::<T>() * scale;
        self.push(Array2::from_elem((1, 1), total), Op::SquaredError { pred, diff, scale })
    }

    pub fn sum(&mut self, ids: Vec<NodeId>) -> NodeId {
        let shape = self.value(ids[0]).dim();
        let mut y = Array2::zeros(shape);
        for &i in &ids {
            y += self.value(i);
        }
        self.push(y, Op::Sum(ids))
    }

    /// Gradients of `root` (seeded with ones) with respect to every node.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Array2::ones(self.value(root).dim()));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, id: NodeId, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        fn acc<T: Real>(grads: &mut [Option<Array2<T>>], id: NodeId, delta: Array2<T>) {
            match &mut grads[id] {
                Some(existing) => *existing += &delta,
                slot => *slot = Some(delta),
            }
        }
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                acc(grads, *x, g.dot(self.value(*w)));
                acc(grads, *w, g.t().dot(self.value(*x)));
                if let Some(b) = b {
                    acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddTiled { x, table } => {
                acc(grads, *x, g.clone());
                let p = self.value(*table).nrows();
                let mut gt = Array2::zeros(self.value(*table).dim());
                for (r, row) in g.axis_iter(Axis(0)).enumerate() {
                    let mut dst = gt.row_mut(r % p);
                    dst += &row;
                }
                acc(grads, *table, gt);
            }
            Op::GatherRows { x, rows } => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                for (j, &r) in rows.iter().enumerate() {
                    let mut dst = gx.row_mut(r);
                    dst += &g.row(j);
                }
                acc(grads, *x, gx);
            }
            Op::Scatter { src, token, rows } => {
                let gs = g.select(Axis(0), rows);
                let mut is_src = vec![false; g.nrows()];
                for &r in rows {
                    is_src[r] = true;
                }
                let mut gt = Array2::zeros((1, g.ncols()));
                for (r, row) in g.axis_iter(Axis(0)).enumerate() {
                    if !is_src[r] {
                        let mut dst = gt.row_mut(0);
                        dst += &row;
                    }
                }
                acc(grads, *src, gs);
                acc(grads, *token, gt);
            }
            Op::Interleave(parts) => {
                let m = parts.len();
                for (i, &p) in parts.iter().enumerate() {
                    acc(grads, p, g.slice(s![i..;m, ..]).to_owned());
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain);
                acc(grads, *gain, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let d = T::of(xhat.ncols() as f64);
                let dxhat = g * gv;
                let mut gx = Array2::zeros(xhat.dim());
                for (r, mut out) in gx.axis_iter_mut(Axis(0)).enumerate() {
                    let dh = dxhat.row(r);
                    let xh = xhat.row(r);
                    let s1 = dh.sum();
                    let s2 = dh.dot(&xh);
                    let k = inv_std[r] / d;
                    Zip::from(&mut out)
                        .and(&dh)
                        .and(&xh)
                        .for_each(|o, &a, &h| *o = k * (d * a - s1 - h * s2));
                }
                acc(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let mut gx = self.value(*x).mapv(|v| gelu_parts(v).1);
                gx *= g;
                acc(grads, *x, gx);
            }
            Op::Attention { qkv, seq, heads, probs } => {
                let v = self.value(*qkv);
                let (rows, w3) = v.dim();
                let d = w3 / 3;
                let dh = d / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let mut gq = Array2::zeros((rows, w3));
                for b in 0..rows / seq {
                    let r = b * seq..(b + 1) * seq;
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let c = h * dh..(h + 1) * dh;
                        let kc = d + c.start..d + c.end;
                        let vc = 2 * d + c.start..2 * d + c.end;
                        let q = v.slice(s![r.clone(), c.clone()]);
                        let k = v.slice(s![r.clone(), kc.clone()]);
                        let val = v.slice(s![r.clone(), vc.clone()]);
                        let go = g.slice(s![r.clone(), c.clone()]);
                        let gv = p.t().dot(&go);
                        let gp = go.dot(&val.t());
                        let mut gs = &gp * p;
                        for (mut row, prow) in gs.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                            let dot = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|o, &pp| *o = *o - pp * dot);
                        }
                        gs *= scale;
                        gq.slice_mut(s![r.clone(), c]).assign(&gs.dot(&k));
                        gq.slice_mut(s![r.clone(), kc]).assign(&gs.t().dot(&q));
                        gq.slice_mut(s![r.clone(), vc]).assign(&gv);
                    }
                }
                acc(grads, *qkv, gq);
            }
            Op::MeanPool { x, seq } => {
                let inv = T::one() / T::of(*seq as f64);
                let (n, d) = self.value(*x).dim();
                let gx = Array2::from_shape_fn((n, d), |(r, j)| g[[r / seq, j]] * inv);
                acc(grads, *x, gx);
            }
            Op::SquaredError { pred, diff, scale } => {
                let k = g[[0, 0]] * *scale * T::of(2.0);
                acc(grads, *pred, diff * k);
            }
            Op::Sum(ids) => {
                for &i in ids {
                    acc(grads, i, g.clone());
                }
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Array2<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng::normal(&mut r))
    }

    /// Central-difference check of d(root)/d(leaf) for a graph builder.
    fn check(leaves: Vec<Array2<f64>>, build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId) {
        let eval = |vals: &[Array2<f64>]| {
            let mut t = Tape::new();
            let ids: Vec<_> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let root = build(&mut t, &ids);
            (t, ids, root)
        };
        let (tape, ids, root) = eval(&leaves);
        let grads = tape.backward(root);
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads
                .get(ids[li])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(leaf.dim()));
            for idx in 0..leaf.len() {
                let mut plus = leaves.clone();
                let mut minus = leaves.clone();
                plus[li].as_slice_mut().unwrap()[idx] += h;
                minus[li].as_slice_mut().unwrap()[idx] -= h;
                let (tp, _, rp) = eval(&plus);
                let (tm, _, rm) = eval(&minus);
                let numeric = (tp.value(rp)[[0, 0]] - tm.value(rm)[[0, 0]]) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(err < 1e-6, "leaf {li} entry {idx}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn squared_norm_closed_form() {
        let w = array![[1.0, 2.0], [0.5, -1.0]];
        let x = array![[3.0, 4.0]];
        let mut t = Tape::new();
        let wi = t.leaf(w.clone());
        let xi = t.leaf(x.clone());
        let y = t.linear(xi, wi, None);
        let loss = t.squared_error(y, &Array2::zeros((1, 2)), 0.5);
        let g = t.backward(loss);
        let wx = w.dot(&x.t());
        assert_eq!(g.get(wi).unwrap(), &wx.dot(&x));
    }

    #[test]
    fn linear_and_layer_norm_gradients() {
        let target = random(4, 3, 9);
        check(vec![random(4, 5, 1), random(3, 5, 2), random(1, 3, 3)], |t, ids| {
            let y = t.linear(ids[0], ids[1], Some(ids[2]));
            t.squared_error(y, &target, 0.7)
        });
        let target = random(4, 5, 10);
        check(vec![random(4, 5, 4), random(1, 5, 5), random(1, 5, 6)], |t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2]);
            let y = t.gelu(y);
            t.squared_error(y, &target, 1.0)
        });
    }

    #[test]
    fn attention_gradient() {
        let target = random(6, 4, 11);
        check(vec![random(6, 12, 7)], |t, ids| {
            let y = t.attention(ids[0], 3, 2);
            t.squared_error(y, &target, 1.0)
        });
    }

    #[test]
    fn routing_gradients() {
        let target = random(2, 3, 12);
        check(
            vec![random(2, 3, 1), random(2, 3, 2), random(2, 3, 3), random(1, 3, 4), random(3, 3, 5)],
            |t, ids| {
                let z = t.interleave(vec![ids[0], ids[1], ids[2]]);
                let z = t.add_tiled(z, ids[4]);
                let v = t.gather_rows(z, vec![0, 2, 4]);
                let full = t.scatter(v, ids[3], vec![1, 3, 5], 6);
                let p = t.mean_pool(full, 3);
                let a = t.squared_error(p, &target, 1.0);
                let b = t.add(z, z);
                let b = t.gather_rows(b, vec![5]);
                let b = t.squared_error(b, &Array2::zeros((1, 3)), 0.3);
                t.sum(vec![a, b])
            },
        );
    }

    #[test]
    fn interleave_layout() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0], [2.0]]);
        let b = t.leaf(array![[10.0], [20.0]]);
        let z = t.interleave(vec![a, b]);
        assert_eq!(t.value(z), &array![[1.0], [10.0], [2.0], [20.0]]);
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut t = Tape::new();
        // Keys all equal: attention is uniform, output is the mean value.
        let mut qkv = random(3, 6, 3);
        for r in 0..3 {
            qkv[[r, 2]] = 0.5;
            qkv[[r, 3]] = -1.0;
        }
        let q = t.leaf(qkv.clone());
        let y = t.attention(q, 3, 1);
        let mean4 = qkv.column(4).sum() / 3.0;
        for r in 0..3 {
            assert!((t.value(y)[[r, 0]] - mean4).abs() < 1e-12);
        }
    }
}
