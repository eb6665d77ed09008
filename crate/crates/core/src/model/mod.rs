//! Transformer encoder-decoder with an optional coreference sub-model.

pub mod checkpoint;
pub(crate) mod layers;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Variant};
use crate::corpus::{CorefClusterSet, WindowRecord};
use crate::nn::{init_uniform, sinusoidal_positions, Graph, ParamStore, Stream, Tensor, Var};
use crate::vocab::{TokenId, Vocab, BOS, EOS, SEP};
use crate::{coref, Error, Result};

use layers::{causal_mask, decoder_layer, encoder_layer, init_decoder_layer, init_encoder_layer, Drop};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Seed offset separating the coreference parameter stream from the
/// translation one.
const COREF_SEED_SALT: u64 = 0x636f_7265_6600;

/// A window converted to token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedWindow {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    pub clusters: CorefClusterSet,
}

impl EncodedWindow {
    /// Decoder input: `<s>` followed by the target.
    pub fn decoder_input(&self) -> Vec<TokenId> {
        std::iter::once(BOS).chain(self.tgt.iter().copied()).collect()
    }

    /// Decoder output: the target followed by `</s>`.
    pub fn decoder_output(&self) -> Vec<TokenId> {
        self.tgt.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    /// 1-based positions of separator tokens in the source.
    pub fn separator_positions(&self) -> Vec<usize> {
        separator_ids(&self.src)
    }
}

pub(crate) fn separator_ids(src: &[TokenId]) -> Vec<usize> {
    src.iter()
        .enumerate()
        .filter(|(_, &t)| t == SEP)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Hidden states for one window.
#[derive(Clone, Debug)]
pub struct SequenceRepresentations {
    pub h_enc: Tensor,
    pub h_dec: Tensor,
    pub h_coref: Option<Tensor>,
}

/// Graph handles for one teacher-forced pass.
pub(crate) struct Forward {
    pub h_enc: Var,
    pub h_dec: Var,
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    positions: Tensor,
    calls: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            positions: self.positions.clone(),
            calls: AtomicUsize::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("variant", &self.config.variant)
            .field("vocab", &self.vocab.len())
            .field("params", &self.params.num_scalars())
            .finish()
    }
}

impl Model {
    /// Freshly initialised model. Translation parameters come from one seeded
    /// stream and coreference parameters from another, so the translation
    /// weights are identical across variants for a given seed.
    pub fn new(mut config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != 0 && config.vocab_size != vocab.len() {
            return Err(Error::CheckpointMismatch(format!(
                "vocab_size {} vs vocabulary of {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.vocab_size = vocab.len();
        let d = config.d_model;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        params.insert("embed", init_uniform(&mut rng, v, d, d));
        for l in 0..config.enc_layers {
            init_encoder_layer(&mut params, &mut rng, &format!("enc.{l}"), d, config.ffn_dim);
        }
        for l in 0..config.dec_layers {
            init_decoder_layer(&mut params, &mut rng, &format!("dec.{l}"), d, config.ffn_dim);
        }
        params.insert("out.w", init_uniform(&mut rng, v, d, d));
        if config.variant.has_coref_head() {
            let mut crng = ChaCha8Rng::seed_from_u64(config.seed ^ COREF_SEED_SALT);
            coref::init_params(&mut params, &mut crng, &config);
        }
        Ok(Self::from_parts(config, vocab, params))
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamStore) -> Self {
        let positions = sinusoidal_positions(config.max_len, config.d_model);
        Model {
            config,
            vocab,
            params,
            positions,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of encoder or decoder passes run so far.
    pub fn forward_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn encode_record(&self, rec: &WindowRecord) -> Result<EncodedWindow> {
        Ok(EncodedWindow {
            src: self.vocab.encode_strict(&rec.src)?,
            tgt: self.vocab.encode_strict(&rec.tgt)?,
            clusters: rec.clusters.clone(),
        })
    }

    /// Like [`Model::encode_record`] but maps unknown tokens to `<unk>`.
    pub fn encode_record_lossy(&self, rec: &WindowRecord) -> EncodedWindow {
        EncodedWindow {
            src: self.vocab.encode(&rec.src),
            tgt: self.vocab.encode(&rec.tgt),
            clusters: rec.clusters.clone(),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::LengthOverflow {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    fn drop_mt(&self) -> Drop {
        Drop {
            p: self.config.dropout_mt,
            stream: Stream::Translation,
        }
    }

    fn embed(&self, g: &mut Graph, ids: &[TokenId], extra: Option<&Tensor>) -> Var {
        let n = ids.len();
        let d = self.config.d_model;
        let table = g.param(&self.params, "embed");
        let e = g.gather_rows(table, ids.to_vec());
        let e = g.scale(e, (d as f64).sqrt());
        let mut pos = self.positions.select_rows(&(0..n).collect::<Vec<_>>());
        if let Some(extra) = extra {
            pos.add_assign(extra);
        }
        let pos = g.constant(pos);
        let h = g.add(e, pos);
        g.dropout(h, self.config.dropout_mt, Stream::Translation)
    }

    /// Encoder stack. `clusters` feeds the coreference position embedding of
    /// the C-Embedding variant and is ignored otherwise.
    pub(crate) fn encode_graph(
        &self,
        g: &mut Graph,
        src: &[TokenId],
        clusters: &CorefClusterSet,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        self.check_len(src.len())?;
        if src.is_empty() {
            return Err(Error::InvalidArgument("empty source sequence".into()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let cpe = match self.config.variant {
            Variant::CEmbedding => Some(coref_position_embedding(src.len(), self.config.d_model, clusters)?),
            _ => None,
        };
        let mut h = self.embed(g, src, cpe.as_ref());
        let mut attn = Vec::with_capacity(self.config.enc_layers);
        for l in 0..self.config.enc_layers {
            let (next, w) = encoder_layer(g, &self.params, &format!("enc.{l}"), self.config.heads, h, self.drop_mt());
            h = next;
            attn.push(w);
        }
        Ok((h, attn))
    }

    /// Causal decoder stack over `y_in` (which starts with `<s>`).
    pub(crate) fn decode_graph(&self, g: &mut Graph, y_in: &[TokenId], h_enc: Var) -> Result<Var> {
        self.check_len(y_in.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut h = self.embed(g, y_in, None);
        let mask = causal_mask(y_in.len());
        for l in 0..self.config.dec_layers {
            let (next, _) = decoder_layer(
                g,
                &self.params,
                &format!("dec.{l}"),
                self.config.heads,
                h,
                h_enc,
                Some(mask.clone()),
                self.drop_mt(),
            );
            h = next;
        }
        Ok(h)
    }

    pub(crate) fn log_probs_graph(&self, g: &mut Graph, h_dec: Var) -> Var {
        let w = g.param(&self.params, "out.w");
        let logits = g.matmul_t(h_dec, w);
        g.log_softmax(logits)
    }

    pub(crate) fn forward_graph(&self, g: &mut Graph, w: &EncodedWindow) -> Result<Forward> {
        let (h_enc, _) = self.encode_graph(g, &w.src, &w.clusters)?;
        let h_dec = self.decode_graph(g, &w.decoder_input(), h_enc)?;
        Ok(Forward { h_enc, h_dec })
    }

    /// Label-smoothed cross-entropy of one window, summed over target tokens.
    pub(crate) fn mt_loss_graph(&self, g: &mut Graph, fwd: &Forward, w: &EncodedWindow) -> Var {
        let logp = self.log_probs_graph(g, fwd.h_dec);
        g.smoothed_nll(logp, w.decoder_output(), self.config.label_smoothing)
    }

    /// `|x| × d` encoder states.
    pub fn encode(&self, src: &[TokenId], clusters: &CorefClusterSet) -> Result<Tensor> {
        let mut g = Graph::new();
        let (h, _) = self.encode_graph(&mut g, src, clusters)?;
        Ok(g.value(h).clone())
    }

    /// Encoder self-attention matrices, one `|x| × |x|` per head, per layer.
    pub fn encoder_attention(&self, src: &[TokenId], clusters: &CorefClusterSet) -> Result<Vec<Vec<Tensor>>> {
        let mut g = Graph::new();
        let (_, attn) = self.encode_graph(&mut g, src, clusters)?;
        Ok(attn
            .into_iter()
            .map(|layer| layer.into_iter().map(|v| g.value(v).clone()).collect())
            .collect())
    }

    /// `|y| × d` decoder states for the prefix `y_in` (starting with `<s>`).
    pub fn decode(&self, y_in: &[TokenId], h_enc: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let e = g.constant(h_enc.clone());
        let h = self.decode_graph(&mut g, y_in, e)?;
        Ok(g.value(h).clone())
    }

    /// Row-wise log-distributions over the vocabulary.
    pub fn token_log_probs(&self, h_dec: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let h = g.constant(h_dec.clone());
        let lp = self.log_probs_graph(&mut g, h);
        g.value(lp).clone()
    }

    /// Log-distribution of the token following `y_in`.
    pub fn next_token_log_probs(&self, h_enc: &Tensor, y_in: &[TokenId]) -> Result<Vec<f64>> {
        let h = self.decode(y_in, h_enc)?;
        let last = Tensor::from_vec(1, h.cols(), h.row(h.rows() - 1).to_vec());
        Ok(self.token_log_probs(&last).into_vec())
    }

    /// Teacher-forced `log p(y | x)` including the end-of-sequence token.
    pub fn score_target(&self, src: &[TokenId], tgt: &[TokenId], clusters: &CorefClusterSet) -> Result<f64> {
        let w = EncodedWindow {
            src: src.to_vec(),
            tgt: tgt.to_vec(),
            clusters: clusters.clone(),
        };
        let mut g = Graph::new();
        let fwd = self.forward_graph(&mut g, &w)?;
        let lp = self.log_probs_graph(&mut g, fwd.h_dec);
        let lp = g.value(lp);
        Ok(w.decoder_output().iter().enumerate().map(|(r, &t)| lp.get(r, t)).sum())
    }

    /// Summed translation loss over a batch in evaluation mode.
    pub fn mt_loss(&self, batch: &[EncodedWindow]) -> Result<f64> {
        let mut total = 0.0;
        for w in batch {
            let mut g = Graph::new();
            let fwd = self.forward_graph(&mut g, w)?;
            let l = self.mt_loss_graph(&mut g, &fwd, w);
            total += g.value(l).item();
        }
        Ok(total)
    }

    /// Teacher-forced hidden states for one window.
    pub fn representations(&self, w: &EncodedWindow) -> Result<SequenceRepresentations> {
        let mut g = Graph::new();
        let fwd = self.forward_graph(&mut g, w)?;
        let h_coref = match self.config.variant {
            Variant::TransCoref => Some(coref::fuse_graph(self, &mut g, fwd.h_enc, fwd.h_dec).0),
            Variant::TransEnc => Some(coref::enc_only_graph(self, &mut g, fwd.h_enc).0),
            _ => None,
        };
        Ok(SequenceRepresentations {
            h_enc: g.value(fwd.h_enc).clone(),
            h_dec: g.value(fwd.h_dec).clone(),
            h_coref: h_coref.map(|v| g.value(v).clone()),
        })
    }

    /// Fraction of target tokens (including `</s>`) whose teacher-forced
    /// argmax equals the reference, returned as (correct, total).
    pub fn teacher_forced_hits(&self, w: &EncodedWindow) -> Result<(usize, usize)> {
        let mut g = Graph::new();
        let fwd = self.forward_graph(&mut g, w)?;
        let lp = self.log_probs_graph(&mut g, fwd.h_dec);
        let lp = g.value(lp);
        let out = w.decoder_output();
        let hits = out
            .iter()
            .enumerate()
            .filter(|(r, &t)| argmax(lp.row(*r)) == t)
            .count();
        Ok((hits, out.len()))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sinusoidal table for `len` positions in which every token inside a
/// cluster span takes the row of the first token of its cluster's first span.
pub fn coref_position_embedding(len: usize, d: usize, clusters: &CorefClusterSet) -> Result<Tensor> {
    clusters.check_range(len)?;
    let mut table = sinusoidal_positions(len, d);
    let base = table.clone();
    for cluster in clusters.clusters() {
        let anchor = base.row(cluster[0].first_row()).to_vec();
        for span in cluster {
            for r in span.first_row()..=span.last_row() {
                table.row_mut(r).copy_from_slice(&anchor);
            }
        }
    }
    Ok(table)
}
