//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built eagerly: every operation computes its value when it is
//! recorded. [`Graph::backward`] then walks the tape in reverse and returns the
//! gradient of a scalar root with respect to every parameter that was read
//! through [`Graph::param`].

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::dot;
use super::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row-major boolean mask; `true` marks an admissible entry.
pub type Mask = Rc<Vec<bool>>;

/// Dropout random stream, one per sub-model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Translation,
    Coref,
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Dropout(Var, Tensor),
    Sum(Var),
    RowDot(Var, Var),
    RowLogSumExp(Var, Mask),
    SmoothedNll {
        logp: Var,
        targets: Rc<Vec<usize>>,
        smoothing: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    train: bool,
    rng_translation: Option<ChaCha8Rng>,
    rng_coref: Option<ChaCha8Rng>,
}

impl Graph {
    /// A graph in evaluation mode: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            train: false,
            rng_translation: None,
            rng_coref: None,
        }
    }

    /// A graph in training mode with one seeded generator per dropout stream.
    pub fn training(translation: ChaCha8Rng, coref: ChaCha8Rng) -> Self {
        Graph {
            train: true,
            rng_translation: Some(translation),
            rng_coref: Some(coref),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter onto the tape; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let id = store.expect_id(name);
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Sub(a, b))
    }

    /// Adds the `1 × c` row vector `v` to every row of `a`.
    pub fn add_row(&mut self, a: Var, v: Var) -> Var {
        let (x, r) = (self.value(a), self.value(v));
        assert_eq!(r.shape(), (1, x.cols()), "add_row expects a 1 x cols vector");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, v))
    }

    /// Adds the `r × 1` column vector `v` to every column of `a`.
    pub fn add_col(&mut self, a: Var, v: Var) -> Var {
        let (x, c) = (self.value(a), self.value(v));
        assert_eq!(c.shape(), (x.rows(), 1), "add_col expects a rows x 1 vector");
        let mut out = x.clone();
        for i in 0..out.rows() {
            let b = c.data()[i];
            for o in out.row_mut(i) {
                *o += b;
            }
        }
        self.push(out, Op::AddCol(a, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise softmax. Entries outside `mask` get probability zero; every
    /// row must keep at least one admissible entry.
    pub fn softmax(&mut self, a: Var, mask: Option<Mask>) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let allowed = |c: usize| mask.as_ref().map_or(true, |m| m[r * cols + c]);
            let row = x.row(r);
            let max = (0..cols)
                .filter(|&c| allowed(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} fully masked");
            let mut z = 0.0;
            let o = out.row_mut(r);
            for c in 0..cols {
                if allowed(c) {
                    o[c] = (row[c] - max).exp();
                    z += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (gv, bv) = (self.value(gain), self.value(bias));
        assert_eq!(gv.shape(), (1, cols));
        assert_eq!(bv.shape(), (1, cols));
        let mut normed = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let n = (row[c] - mean) * is;
                normed.set(r, c, n);
                out.set(r, c, n * gv.data()[c] + bv.data()[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).select_rows(&idx);
        self.push(out, Op::GatherRows(a, Rc::new(idx)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + x.cols()].copy_from_slice(x.row(r));
            }
            offset += x.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Inverted dropout; the identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, stream: Stream) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let rng = match stream {
            Stream::Translation => self.rng_translation.as_mut(),
            Stream::Coref => self.rng_coref.as_mut(),
        }
        .expect("training graph without rng");
        let (rows, cols) = self.nodes[a.0].value.shape();
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(rows, cols, mask);
        let x = self.value(a);
        let data = x.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(rows, cols, data);
        self.push(out, Op::Dropout(a, mask))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Row-wise inner products of two equally shaped matrices, `r × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "row_dot shape mismatch");
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let out = Tensor::from_vec(x.rows(), 1, data);
        self.push(out, Op::RowDot(a, b))
    }

    /// `log Σ exp` over the admissible entries of each row, `r × 1`.
    pub fn row_logsumexp(&mut self, a: Var, mask: Mask) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let data = (0..x.rows())
            .map(|r| {
                let l = super::tensor::masked_logsumexp(x.row(r), |c| mask[r * cols + c]);
                assert!(l > f64::NEG_INFINITY, "row_logsumexp row {r} fully masked");
                l
            })
            .collect();
        let out = Tensor::from_vec(x.rows(), 1, data);
        self.push(out, Op::RowLogSumExp(a, mask))
    }

    /// Summed label-smoothed negative log-likelihood of `targets` under the
    /// row-wise log-distributions `logp`. The smoothed target puts
    /// `1 - smoothing` on the gold token and spreads `smoothing` uniformly over
    /// the whole vocabulary.
    pub fn smoothed_nll(&mut self, logp: Var, targets: Vec<usize>, smoothing: f64) -> Var {
        let lp = self.value(logp);
        assert_eq!(lp.rows(), targets.len(), "one target per row");
        let v = lp.cols() as f64;
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lp.row(r);
            let nll = -row[t];
            if smoothing > 0.0 {
                let uniform = -row.iter().sum::<f64>() / v;
                total += (1.0 - smoothing) * nll + smoothing * uniform;
            } else {
                total += nll;
            }
        }
        self.push(
            Tensor::scalar(total),
            Op::SmoothedNll {
                logp,
                targets: Rc::new(targets),
                smoothing,
            },
        )
    }

    /// Gradient of the scalar `root` with respect to every parameter read
    /// into this graph.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros_like(store);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, v) => {
                    let mut gv = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, x) in gv.data_mut().iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    acc(&mut grads, *v, gv);
                    acc(&mut grads, *a, g);
                }
                Op::AddCol(a, v) => {
                    let data = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    acc(&mut grads, *v, Tensor::from_vec(g.rows(), 1, data));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_map(&g, self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|v| v * s)),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| x * gelu_grad(y));
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s = dot(g.row(r), y.row(r));
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = y.get(r, c) * (g.get(r, c) - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s: f64 = g.row(r).iter().sum();
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            *o = g.get(r, c) - y.get(r, c).exp() * s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (rows, cols) = normed.shape();
                    let gv = self.value(*gain);
                    let mut g_gain = Tensor::zeros(1, cols);
                    let mut g_bias = Tensor::zeros(1, cols);
                    let mut gx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        let mut gn = vec![0.0; cols];
                        for c in 0..cols {
                            g_gain.data_mut()[c] += gr[c] * nr[c];
                            g_bias.data_mut()[c] += gr[c];
                            gn[c] = gr[c] * gv.data()[c];
                        }
                        let mean_gn = gn.iter().sum::<f64>() / n;
                        let mean_gn_n = dot(&gn, nr) / n;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (gn[c] - mean_gn - nr[c] * mean_gn_n);
                        }
                    }
                    acc(&mut grads, *gain, g_gain);
                    acc(&mut grads, *bias, g_bias);
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Dropout(a, mask) => acc(&mut grads, *a, zip_map(&g, mask, |x, m| x * m)),
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::RowDot(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let mut ga = y.clone();
                    let mut gb = x.clone();
                    for r in 0..x.rows() {
                        let s = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                        gb.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::RowLogSumExp(a, mask) => {
                    let x = self.value(*a);
                    let cols = x.cols();
                    let mut ga = Tensor::zeros(x.rows(), cols);
                    for r in 0..x.rows() {
                        let lse = node.value.data()[r];
                        let gr = g.data()[r];
                        for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                            if mask[r * cols + c] {
                                *o = gr * (x.get(r, c) - lse).exp();
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SmoothedNll {
                    logp,
                    targets,
                    smoothing,
                } => {
                    let lp = self.value(*logp);
                    let scale = g.item();
                    let uniform = smoothing / lp.cols() as f64;
                    let mut ga = Tensor::filled(lp.rows(), lp.cols(), -uniform * scale);
                    for (r, &t) in targets.iter().enumerate() {
                        let v = ga.get(r, t);
                        ga.set(r, t, v - (1.0 - smoothing) * scale);
                    }
                    acc(&mut grads, *logp, ga);
                }
            }
        }
        out
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
