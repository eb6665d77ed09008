//! Coreference sub-model: representation layer, span filtering, mention and
//! antecedent scoring, marginal likelihood and cluster decoding.

use std::rc::Rc;

use rand::Rng;

use crate::config::{ModelConfig, Variant};
use crate::corpus::{CorefClusterSet, Span};
use crate::model::layers::{decoder_layer, encoder_layer, init_decoder_layer, init_encoder_layer, init_linear, linear, Drop};
use crate::model::{EncodedWindow, Forward, Model};
use crate::nn::{init_uniform, masked_logsumexp, Graph, Mask, ParamStore, Stream, Tensor, Var};
use crate::{Error, Result};

const FUSE: &str = "coref.fuse";
const ENC: &str = "coref.enc";
const SCORERS: [&str; 4] = ["coref.ms", "coref.me", "coref.as", "coref.ae"];

pub(crate) fn init_params(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) {
    let (d, h) = (cfg.d_model, cfg.coref_hidden);
    match cfg.variant {
        Variant::TransCoref => init_decoder_layer(store, rng, FUSE, d, cfg.ffn_dim),
        Variant::TransEnc => init_encoder_layer(store, rng, ENC, d, cfg.ffn_dim),
        _ => return,
    }
    for name in SCORERS {
        init_linear(store, rng, name, d, h);
    }
    store.insert("coref.mention.vs", init_uniform(rng, h, 1, h));
    store.insert("coref.mention.ve", init_uniform(rng, h, 1, h));
    store.insert("coref.mention.bil", init_uniform(rng, h, h, h));
    for p in ["ss", "se", "es", "ee"] {
        store.insert(format!("coref.ante.{p}"), init_uniform(rng, h, h, h));
    }
}

fn fused_drop(cfg: &ModelConfig) -> Drop {
    if cfg.coref_dropout_fused {
        Drop {
            p: cfg.dropout_coref,
            stream: Stream::Coref,
        }
    } else {
        Drop::NONE
    }
}

/// Decoder-style layer whose queries are the encoder states and whose
/// cross-attention reads the decoder states. Returns the output and the
/// per-head self-attention weights.
pub(crate) fn fuse_graph(model: &Model, g: &mut Graph, h_enc: Var, h_dec: Var) -> (Var, Vec<Var>) {
    let cfg = &model.config;
    decoder_layer(g, &model.params, FUSE, cfg.heads, h_enc, h_dec, None, fused_drop(cfg))
}

/// One extra encoder layer over the encoder states.
pub(crate) fn enc_only_graph(model: &Model, g: &mut Graph, h_enc: Var) -> (Var, Vec<Var>) {
    let cfg = &model.config;
    encoder_layer(g, &model.params, ENC, cfg.heads, h_enc, fused_drop(cfg))
}

fn require_variant(model: &Model, v: Variant) -> Result<()> {
    if model.config.variant != v {
        return Err(Error::InvalidArgument(format!(
            "operation needs a {v} model, got {}",
            model.config.variant
        )));
    }
    Ok(())
}

/// Fused coreference representation, `|x| × d`.
pub fn fuse_representations(model: &Model, h_enc: &Tensor, h_dec: &Tensor) -> Result<Tensor> {
    require_variant(model, Variant::TransCoref)?;
    let mut g = Graph::new();
    let e = g.constant(h_enc.clone());
    let d = g.constant(h_dec.clone());
    let (h, _) = fuse_graph(model, &mut g, e, d);
    Ok(g.value(h).clone())
}

/// Encoder-only coreference representation, `|x| × d`.
pub fn enc_only_representation(model: &Model, h_enc: &Tensor) -> Result<Tensor> {
    require_variant(model, Variant::TransEnc)?;
    let mut g = Graph::new();
    let e = g.constant(h_enc.clone());
    let (h, _) = enc_only_graph(model, &mut g, e);
    Ok(g.value(h).clone())
}

/// Coreference representation of a window for whichever head the model has.
pub(crate) fn coref_input_graph(model: &Model, g: &mut Graph, fwd: &Forward) -> Result<(Var, Vec<Var>)> {
    match model.config.variant {
        Variant::TransCoref => Ok(fuse_graph(model, g, fwd.h_enc, fwd.h_dec)),
        Variant::TransEnc => Ok(enc_only_graph(model, g, fwd.h_enc)),
        v => Err(Error::InvalidArgument(format!("{v} model has no coreference head"))),
    }
}

/// Every span of at most `max_len` tokens over a sequence of `len` tokens that
/// contains none of the 1-based `excluded` positions, sorted by (start, end).
pub fn enumerate_spans(len: usize, max_len: usize, excluded: &[usize]) -> Vec<Span> {
    let mut out = Vec::new();
    for start in 1..=len {
        for end in start..=(start + max_len - 1).min(len) {
            if excluded.contains(&end) {
                break;
            }
            if excluded.contains(&start) {
                break;
            }
            out.push(Span::new(start, end));
        }
    }
    out
}

/// Number of spans kept out of `n` for a keep fraction `lambda`.
pub fn keep_count(n: usize, lambda: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (lambda * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Indices of the top `keep_count` spans by score (ties to the earlier start,
/// then the earlier end), returned in (start, end) order.
pub fn select_top(spans: &[Span], scores: &[f64], lambda: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| spans[a].cmp(&spans[b]))
    });
    order.truncate(keep_count(spans.len(), lambda));
    order.sort_by(|&a, &b| spans[a].cmp(&spans[b]));
    order
}

/// Retained spans with their mention scores, sorted by (start, end).
#[derive(Clone, Debug, PartialEq)]
pub struct SpanCandidates {
    pub spans: Vec<Span>,
    pub mention_scores: Vec<f64>,
}

/// `K × (K + 1)` antecedent scores. Column 0 is the dummy antecedent (score
/// 0); column `c + 1` holds `f(c, s)` for candidate `c` left of `s` and `-∞`
/// otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct AntecedentScoreMatrix {
    pub spans: Vec<Span>,
    pub scores: Tensor,
}

impl AntecedentScoreMatrix {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Row-wise antecedent distributions.
    pub fn probabilities(&self) -> Tensor {
        let mut p = self.scores.clone();
        for r in 0..p.rows() {
            let row = p.row_mut(r);
            let lse = masked_logsumexp(row, |_| true);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        p
    }
}

fn allowed_mask(k: usize) -> Vec<bool> {
    let cols = k + 1;
    (0..k * cols).map(|i| i % cols == 0 || i % cols - 1 < i / cols).collect()
}

struct ScoreGraph {
    spans: Vec<Span>,
    mention: Var,
    logits: Option<Var>,
}

fn scorer(g: &mut Graph, model: &Model, name: &str, h: Var) -> Var {
    let x = linear(g, &model.params, name, h);
    let x = g.gelu(x);
    g.dropout(x, model.config.dropout_coref, Stream::Coref)
}

/// Scores every enumerable span, keeps the top fraction and builds the
/// antecedent logits over the survivors.
fn score_graph(model: &Model, g: &mut Graph, h: Var, excluded: &[usize]) -> ScoreGraph {
    let cfg = &model.config;
    let p = &model.params;
    let len = g.value(h).rows();
    let all = enumerate_spans(len, cfg.max_span_len, excluded);
    let ms = scorer(g, model, SCORERS[0], h);
    let me = scorer(g, model, SCORERS[1], h);
    if all.is_empty() {
        let mention = g.constant(Tensor::zeros(0, 1));
        return ScoreGraph {
            spans: all,
            mention,
            logits: None,
        };
    }
    let vs = g.param(p, "coref.mention.vs");
    let ve = g.param(p, "coref.mention.ve");
    let bil = g.param(p, "coref.mention.bil");
    let s = g.gather_rows(ms, all.iter().map(Span::first_row).collect());
    let e = g.gather_rows(me, all.iter().map(Span::last_row).collect());
    let a = g.matmul(s, vs);
    let b = g.matmul(e, ve);
    let sb = g.matmul(s, bil);
    let c = g.row_dot(sb, e);
    let ab = g.add(a, b);
    let all_scores = g.add(ab, c);

    let kept = select_top(&all, g.value(all_scores).data(), cfg.top_lambda);
    let spans: Vec<Span> = kept.iter().map(|&i| all[i]).collect();
    let mention = g.gather_rows(all_scores, kept);
    let k = spans.len();

    let as_ = scorer(g, model, SCORERS[2], h);
    let ae = scorer(g, model, SCORERS[3], h);
    let starts: Vec<usize> = spans.iter().map(Span::first_row).collect();
    let ends: Vec<usize> = spans.iter().map(Span::last_row).collect();
    let xs = g.gather_rows(as_, starts);
    let xe = g.gather_rows(ae, ends);
    let mut fa: Option<Var> = None;
    for (name, left, right) in [("ss", xs, xs), ("se", xs, xe), ("es", xe, xs), ("ee", xe, xe)] {
        let w = g.param(p, &format!("coref.ante.{name}"));
        let lw = g.matmul(left, w);
        let term = g.matmul_t(lw, right);
        fa = Some(match fa {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    let f = g.add_col(fa.expect("four terms"), mention);
    let mt = g.transpose(mention);
    let f = g.add_row(f, mt);
    let eps = g.constant(Tensor::zeros(k, 1));
    let logits = g.concat_cols(&[eps, f]);
    ScoreGraph {
        spans,
        mention,
        logits: Some(logits),
    }
}

/// Keeps the `max` largest clusters; among equal sizes the cluster whose
/// first span comes earlier wins.
pub fn cap_clusters(gold: &CorefClusterSet, max: usize) -> CorefClusterSet {
    if gold.len() <= max {
        return gold.clone();
    }
    let mut order: Vec<&Vec<Span>> = gold.clusters().iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
    order.truncate(max);
    CorefClusterSet::new(order.into_iter().cloned().collect()).expect("subset of a valid set")
}

/// Gold-consistent antecedent columns for every retained span: earlier
/// retained mentions of the same gold cluster, or the dummy column when there
/// are none. Clusters with fewer than two retained mentions supervise
/// nothing.
pub fn gold_antecedent_mask(spans: &[Span], gold: &CorefClusterSet) -> Vec<bool> {
    let k = spans.len();
    let cols = k + 1;
    let ids: Vec<Option<usize>> = spans.iter().map(|s| gold.cluster_of(s)).collect();
    let mut retained = vec![0usize; gold.len()];
    for id in ids.iter().flatten() {
        retained[*id] += 1;
    }
    let ids: Vec<Option<usize>> = ids
        .into_iter()
        .map(|id| id.filter(|&c| retained[c] >= 2))
        .collect();
    let mut mask = vec![false; k * cols];
    for s in 0..k {
        let mut any = false;
        if let Some(cid) = ids[s] {
            for c in 0..s {
                if ids[c] == Some(cid) {
                    mask[s * cols + c + 1] = true;
                    any = true;
                }
            }
        }
        if !any {
            mask[s * cols] = true;
        }
    }
    mask
}

/// Negative marginal log-likelihood of `gold` under `scores`.
pub fn coref_loss(scores: &AntecedentScoreMatrix, gold: &CorefClusterSet) -> f64 {
    let k = scores.len();
    let cols = k + 1;
    let gm = gold_antecedent_mask(&scores.spans, gold);
    let mut loss = 0.0;
    for s in 0..k {
        let row = scores.scores.row(s);
        let all = masked_logsumexp(row, |c| row[c] > f64::NEG_INFINITY);
        let good = masked_logsumexp(row, |c| gm[s * cols + c]);
        loss += all - good;
    }
    loss
}

fn loss_graph(g: &mut Graph, logits: Var, spans: &[Span], gold: &CorefClusterSet) -> Var {
    let k = spans.len();
    let allowed: Mask = Rc::new(allowed_mask(k));
    let gm: Mask = Rc::new(gold_antecedent_mask(spans, gold));
    let all = g.row_logsumexp(logits, allowed);
    let good = g.row_logsumexp(logits, gm);
    let diff = g.sub(all, good);
    g.sum(diff)
}

/// Coreference loss of one window given its teacher-forced forward pass.
pub(crate) fn window_loss_graph(model: &Model, g: &mut Graph, fwd: &Forward, w: &EncodedWindow) -> Result<Var> {
    let (h, _) = coref_input_graph(model, g, fwd)?;
    let sg = score_graph(model, g, h, &w.separator_positions());
    let gold = cap_clusters(&w.clusters, model.config.max_clusters);
    Ok(match sg.logits {
        Some(l) => loss_graph(g, l, &sg.spans, &gold),
        None => g.constant(Tensor::scalar(0.0)),
    })
}

fn to_matrix(g: &Graph, sg: &ScoreGraph) -> AntecedentScoreMatrix {
    let k = sg.spans.len();
    let mut scores = match sg.logits {
        Some(l) => g.value(l).clone(),
        None => Tensor::zeros(0, 1),
    };
    let allowed = allowed_mask(k);
    for (v, ok) in scores.data_mut().iter_mut().zip(allowed) {
        if !ok {
            *v = f64::NEG_INFINITY;
        }
    }
    AntecedentScoreMatrix {
        spans: sg.spans.clone(),
        scores,
    }
}

/// Mention scoring and top-fraction filtering over a coreference
/// representation. `excluded` lists 1-based positions no span may cover.
pub fn filter_spans(model: &Model, h_coref: &Tensor, excluded: &[usize]) -> SpanCandidates {
    let mut g = Graph::new();
    let h = g.constant(h_coref.clone());
    let sg = score_graph(model, &mut g, h, excluded);
    SpanCandidates {
        spans: sg.spans.clone(),
        mention_scores: g.value(sg.mention).data().to_vec(),
    }
}

/// Antecedent scores for the spans retained from `h_coref`.
pub fn antecedent_scores(model: &Model, h_coref: &Tensor, excluded: &[usize]) -> AntecedentScoreMatrix {
    let mut g = Graph::new();
    let h = g.constant(h_coref.clone());
    let sg = score_graph(model, &mut g, h, excluded);
    to_matrix(&g, &sg)
}

/// Antecedent scores for a window, teacher-forcing the decoder on `w.tgt`.
pub fn window_scores(model: &Model, w: &EncodedWindow) -> Result<AntecedentScoreMatrix> {
    let mut g = Graph::new();
    let fwd = model.forward_graph(&mut g, w)?;
    let (h, _) = coref_input_graph(model, &mut g, &fwd)?;
    let sg = score_graph(model, &mut g, h, &w.separator_positions());
    Ok(to_matrix(&g, &sg))
}

/// `log p(C | y, x)` for the gold clusters of `w` with the decoder
/// teacher-forced on `w.tgt`.
pub fn coref_log_prob(model: &Model, w: &EncodedWindow) -> Result<f64> {
    let scores = window_scores(model, w)?;
    let gold = cap_clusters(&w.clusters, model.config.max_clusters);
    Ok(-coref_loss(&scores, &gold))
}

/// Greedy decoding of clusters: each span links to its highest-scoring
/// antecedent provided that score beats the dummy and the antecedent's
/// cluster has no span overlapping it. Singletons are dropped.
pub fn predict_clusters(scores: &AntecedentScoreMatrix) -> CorefClusterSet {
    let k = scores.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for s in 0..k {
        let row = scores.scores.row(s);
        let mut cands: Vec<usize> = (0..s).filter(|&c| row[c + 1] > row[0]).collect();
        cands.sort_by(|&a, &b| row[b + 1].total_cmp(&row[a + 1]).then(a.cmp(&b)));
        for c in cands {
            let root = find(&mut parent, c);
            let clash = (0..s).any(|o| find(&mut parent, o) == root && scores.spans[o].overlaps(&scores.spans[s]));
            if !clash {
                parent[s] = root;
                break;
            }
        }
    }
    let mut groups: Vec<Vec<Span>> = Vec::new();
    let mut index = vec![usize::MAX; k];
    for s in 0..k {
        let r = find(&mut parent, s);
        if index[r] == usize::MAX {
            index[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index[r]].push(scores.spans[s]);
    }
    CorefClusterSet::new(groups.into_iter().filter(|c| c.len() >= 2).collect())
        .expect("decoded clusters are non-overlapping")
}

/// Clusters predicted for a window with the decoder teacher-forced on `w.tgt`.
pub fn predict_window(model: &Model, w: &EncodedWindow) -> Result<CorefClusterSet> {
    Ok(predict_clusters(&window_scores(model, w)?))
}

/// Self-attention of the coreference layer, one matrix per head.
pub fn coref_attention(model: &Model, w: &EncodedWindow) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let fwd = model.forward_graph(&mut g, w)?;
    let (_, attn) = coref_input_graph(model, &mut g, &fwd)?;
    Ok(attn.into_iter().map(|v| g.value(v).clone()).collect())
}
