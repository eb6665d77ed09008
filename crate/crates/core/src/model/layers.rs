//! Transformer building blocks recorded on a [`Graph`].

use std::rc::Rc;

use rand::Rng;

use crate::nn::{init_uniform, Graph, Mask, ParamStore, Stream, Tensor, Var};

/// Dropout placement for one layer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Drop {
    pub p: f64,
    pub stream: Stream,
}

impl Drop {
    pub const NONE: Drop = Drop {
        p: 0.0,
        stream: Stream::Translation,
    };
}

pub(crate) fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{name}.w"), init_uniform(rng, fan_in, fan_out, fan_in));
    store.insert(format!("{name}.b"), init_uniform(rng, 1, fan_out, fan_in));
}

pub(crate) fn init_layer_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.g"), Tensor::filled(1, d, 1.0));
    store.insert(format!("{name}.b"), Tensor::zeros(1, d));
}

pub(crate) fn init_attention(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, rng, &format!("{name}.{p}"), d, d);
    }
}

pub(crate) fn init_ffn(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, hidden: usize) {
    init_linear(store, rng, &format!("{name}.1"), d, hidden);
    init_linear(store, rng, &format!("{name}.2"), hidden, d);
}

pub(crate) fn init_encoder_layer(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, ffn: usize) {
    init_attention(store, rng, &format!("{name}.self"), d);
    init_layer_norm(store, &format!("{name}.ln1"), d);
    init_ffn(store, rng, &format!("{name}.ffn"), d, ffn);
    init_layer_norm(store, &format!("{name}.ln2"), d);
}

pub(crate) fn init_decoder_layer(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, ffn: usize) {
    init_attention(store, rng, &format!("{name}.self"), d);
    init_layer_norm(store, &format!("{name}.ln1"), d);
    init_attention(store, rng, &format!("{name}.cross"), d);
    init_layer_norm(store, &format!("{name}.ln2"), d);
    init_ffn(store, rng, &format!("{name}.ffn"), d, ffn);
    init_layer_norm(store, &format!("{name}.ln3"), d);
}

pub(crate) fn linear(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Var {
    let w = g.param(p, &format!("{name}.w"));
    let b = g.param(p, &format!("{name}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn layer_norm(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Var {
    let gain = g.param(p, &format!("{name}.g"));
    let bias = g.param(p, &format!("{name}.b"));
    g.layer_norm(x, gain, bias)
}

/// Lower-triangular mask (including the diagonal) for `n` decoder positions.
pub(crate) fn causal_mask(n: usize) -> Mask {
    Rc::new((0..n * n).map(|i| i % n <= i / n).collect())
}

/// Multi-head scaled dot-product attention. Returns the projected output and
/// the per-head attention matrices.
pub(crate) fn attention(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    heads: usize,
    query: Var,
    memory: Var,
    mask: Option<Mask>,
) -> (Var, Vec<Var>) {
    let q = linear(g, p, &format!("{name}.q"), query);
    let k = linear(g, p, &format!("{name}.k"), memory);
    let v = linear(g, p, &format!("{name}.v"), memory);
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let s = g.matmul_t(qh, kh);
        let s = g.scale(s, scale);
        let a = g.softmax(s, mask.clone());
        weights.push(a);
        outs.push(g.matmul(a, vh));
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    (linear(g, p, &format!("{name}.o"), cat), weights)
}

fn ffn(g: &mut Graph, p: &ParamStore, name: &str, x: Var, drop: Drop) -> Var {
    let h = linear(g, p, &format!("{name}.1"), x);
    let h = g.relu(h);
    let h = g.dropout(h, drop.p, drop.stream);
    linear(g, p, &format!("{name}.2"), h)
}

fn residual(g: &mut Graph, p: &ParamStore, ln: &str, x: Var, sub: Var, drop: Drop) -> Var {
    let sub = g.dropout(sub, drop.p, drop.stream);
    let s = g.add(x, sub);
    layer_norm(g, p, ln, s)
}

/// Post-norm encoder layer over `x` with unmasked self-attention.
pub(crate) fn encoder_layer(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    heads: usize,
    x: Var,
    drop: Drop,
) -> (Var, Vec<Var>) {
    let (a, w) = attention(g, p, &format!("{name}.self"), heads, x, x, None);
    let x = residual(g, p, &format!("{name}.ln1"), x, a, drop);
    let f = ffn(g, p, &format!("{name}.ffn"), x, drop);
    (residual(g, p, &format!("{name}.ln2"), x, f, drop), w)
}

/// Post-norm decoder layer: self-attention under `self_mask`, then
/// cross-attention into `memory`, then the feed-forward block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn decoder_layer(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    heads: usize,
    x: Var,
    memory: Var,
    self_mask: Option<Mask>,
    drop: Drop,
) -> (Var, Vec<Var>) {
    let (a, w) = attention(g, p, &format!("{name}.self"), heads, x, x, self_mask);
    let x = residual(g, p, &format!("{name}.ln1"), x, a, drop);
    let (c, _) = attention(g, p, &format!("{name}.cross"), heads, x, memory, None);
    let x = residual(g, p, &format!("{name}.ln2"), x, c, drop);
    let f = ffn(g, p, &format!("{name}.ffn"), x, drop);
    (residual(g, p, &format!("{name}.ln3"), x, f, drop), w)
}
