//! Beam search, N-best reranking with the coreference score, β tuning and
//! oracle selection.

mod nbest;

use std::cmp::Ordering;

use serde::Serialize;

pub use nbest::{read_nbest, write_nbest};

use crate::corpus::{detokenize, last_sentence, CorefClusterSet, Sentence};
use crate::eval::bleu::{bleu_from_stats, ngram_stats, sentence_bleu, NgramStats};
use crate::model::{EncodedWindow, Model};
use crate::vocab::{TokenId, BOS, EOS};
use crate::{coref, Error, Result};

/// β search range and step.
pub const BETA_MIN: f64 = -2.0;
pub const BETA_MAX: f64 = 2.0;
pub const BETA_STEP: f64 = 1e-4;
const BETA_STEPS: i64 = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hypothesis {
    pub tokens: Sentence,
    pub lp_mt: f64,
    pub lp_coref: Option<f64>,
    pub joint: f64,
}

impl Hypothesis {
    pub fn joint_for(&self, beta: f64) -> f64 {
        match self.lp_coref {
            Some(c) if beta != 0.0 => self.lp_mt + beta * c,
            _ => self.lp_mt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RankKey {
    Mt,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NBestList {
    pub window_id: usize,
    pub beam: usize,
    pub key: RankKey,
    pub beta: f64,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

/// Longest target (excluding `</s>`) considered for a source of `src_len`.
pub fn max_target_len(model: &Model, src_len: usize) -> usize {
    (2 * src_len + 10).min(model.config.max_len - 1)
}

/// Beam search scored by the raw sum of token log-probabilities, or by the
/// per-token mean when `length_norm` is set in the config. Candidates are
/// ordered by score, then token id, then parent rank.
pub fn beam_search(model: &Model, src: &[TokenId], clusters: &CorefClusterSet, beam: usize) -> Result<NBestList> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam must be at least 1".into()));
    }
    let h_enc = model.encode(src, clusters)?;
    let max_len = max_target_len(model, src.len());
    let norm = |score: f64, len: usize| {
        if model.config.length_norm {
            score / len as f64
        } else {
            score
        }
    };
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(f64, TokenId, usize)> = Vec::new();
        for (rank, (prefix, score)) in live.iter().enumerate() {
            let lp = model.next_token_log_probs(&h_enc, prefix)?;
            if prefix.len() > max_len {
                cands.push((score + lp[EOS], EOS, rank));
                continue;
            }
            for (t, &l) in lp.iter().enumerate() {
                if t != BOS {
                    cands.push((score + l, t, rank));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beam);
        for &(score, t, rank) in cands.iter().take(beam) {
            let prefix = &live[rank].0;
            if t == EOS {
                finished.push((prefix[1..].to_vec(), score));
            } else {
                let mut p = prefix.clone();
                p.push(t);
                next.push((p, score));
            }
        }
        live = next;
        if finished.len() >= beam && !model.config.length_norm {
            let mut fin: Vec<f64> = finished.iter().map(|(_, s)| *s).collect();
            fin.sort_by(|a, b| b.total_cmp(a));
            let best_live = live.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
            if best_live <= fin[beam - 1] {
                break;
            }
        }
    }
    let mut hyps: Vec<(Vec<TokenId>, f64, f64)> = finished
        .into_iter()
        .map(|(t, s)| {
            let key = norm(s, t.len() + 1);
            (t, s, key)
        })
        .collect();
    hyps.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    hyps.truncate(beam);
    Ok(NBestList {
        window_id: 0,
        beam,
        key: RankKey::Mt,
        beta: 0.0,
        hypotheses: hyps
            .into_iter()
            .map(|(t, s, _)| Hypothesis {
                tokens: model.vocab.decode(&t),
                lp_mt: s,
                lp_coref: None,
                joint: s,
            })
            .collect(),
    })
}

/// Single best continuation at every step.
pub fn greedy_decode(model: &Model, src: &[TokenId], clusters: &CorefClusterSet) -> Result<Sentence> {
    Ok(beam_search(model, src, clusters, 1)?.hypotheses.remove(0).tokens)
}

/// Fills `lp_coref` for every hypothesis by teacher-forcing the decoder on it.
pub fn score_coref(model: &Model, nbest: &mut NBestList, src: &[TokenId], clusters: &CorefClusterSet) -> Result<()> {
    for h in &mut nbest.hypotheses {
        let w = EncodedWindow {
            src: src.to_vec(),
            tgt: model.vocab.encode(&h.tokens),
            clusters: clusters.clone(),
        };
        h.lp_coref = Some(coref::coref_log_prob(model, &w)?);
    }
    Ok(())
}

/// Reorders by `lp_mt + beta * lp_coref` using cached scores. The sort is
/// stable, so exact ties keep their previous order.
pub fn rerank_cached(nbest: &NBestList, beta: f64) -> NBestList {
    let mut out = nbest.clone();
    for h in &mut out.hypotheses {
        h.joint = h.joint_for(beta);
    }
    out.hypotheses.sort_by(|a, b| b.joint.partial_cmp(&a.joint).unwrap_or(Ordering::Equal));
    out.key = RankKey::Joint;
    out.beta = beta;
    out
}

/// Computes coreference scores for the list and reranks it.
pub fn rerank(
    model: &Model,
    nbest: &NBestList,
    src: &[TokenId],
    clusters: &CorefClusterSet,
    beta: f64,
) -> Result<NBestList> {
    let mut scored = nbest.clone();
    score_coref(model, &mut scored, src, clusters)?;
    Ok(rerank_cached(&scored, beta))
}

/// The text evaluated for a window: its last sentence with subwords merged.
pub fn eval_tokens(seq: &[String]) -> Sentence {
    detokenize(last_sentence(seq))
}

/// Every β on the search grid, as `k * 1e-4` for integer `k` in ±20000.
pub fn beta_grid() -> impl Iterator<Item = f64> {
    (-BETA_STEPS..=BETA_STEPS).map(|k| k as f64 / 10_000.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaChoice {
    pub beta: f64,
    pub bleu: f64,
    pub evaluated: usize,
}

/// Grid search for the β maximising corpus BLEU of the reranked top
/// hypotheses. Works only from cached scores. Ties go to the smallest |β|,
/// then to the non-negative value.
pub fn tune_beta(lists: &[NBestList], references: &[Sentence]) -> Result<BetaChoice> {
    if lists.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    if lists.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: lists.len(),
            right: references.len(),
        });
    }
    let refs: Vec<Sentence> = references.iter().map(|r| eval_tokens(r)).collect();
    let stats: Vec<Vec<NgramStats>> = lists
        .iter()
        .zip(&refs)
        .map(|(l, r)| l.hypotheses.iter().map(|h| ngram_stats(&eval_tokens(&h.tokens), r)).collect())
        .collect();
    let mut best: Option<BetaChoice> = None;
    let mut evaluated = 0;
    let order = std::iter::once(0).chain((1..=BETA_STEPS).flat_map(|k| [k, -k]));
    for k in order {
        let beta = k as f64 / 10_000.0;
        evaluated += 1;
        let mut total = NgramStats::default();
        for (l, st) in lists.iter().zip(&stats) {
            let mut pick = 0;
            let mut pick_score = f64::NEG_INFINITY;
            for (i, h) in l.hypotheses.iter().enumerate() {
                let s = h.joint_for(beta);
                if s > pick_score {
                    pick = i;
                    pick_score = s;
                }
            }
            if !st.is_empty() {
                total.add(&st[pick]);
            }
        }
        let bleu = bleu_from_stats(&total);
        if best.map_or(true, |b| bleu > b.bleu) {
            best = Some(BetaChoice { beta, bleu, evaluated: 0 });
        }
    }
    let mut b = best.expect("grid is non-empty");
    b.evaluated = evaluated;
    Ok(b)
}

/// The hypothesis with the highest smoothed sentence-BLEU against
/// `reference` (compared on last sentences); ties go to the higher `lp_mt`,
/// then to the earlier rank.
pub fn oracle_select<'a>(nbest: &'a NBestList, reference: &[String]) -> Result<&'a Hypothesis> {
    let r = eval_tokens(reference);
    let mut best: Option<(&Hypothesis, f64)> = None;
    for h in &nbest.hypotheses {
        let b = sentence_bleu(&eval_tokens(&h.tokens), &r);
        let better = match best {
            None => true,
            Some((bh, bb)) => b > bb || (b == bb && h.lp_mt > bh.lp_mt),
        };
        if better {
            best = Some((h, b));
        }
    }
    best.map(|(h, _)| h)
        .ok_or_else(|| Error::InvalidArgument("oracle selection on an empty N-best list".into()))
}
