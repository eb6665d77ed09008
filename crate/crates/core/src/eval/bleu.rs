//! BLEU-4 over pre-tokenised text.

use std::collections::HashMap;

use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and totals for orders 1..=4 plus lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl NgramStats {
    pub fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

pub fn ngram_stats<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> NgramStats {
    let mut s = NgramStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let h = counts(hyp, n);
        let r = counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    }
    s
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

/// BLEU in [0, 100] from accumulated statistics. Any order with no matches
/// (or no n-grams at all) gives 0.
pub fn bleu_from_stats(s: &NgramStats) -> f64 {
    if (0..MAX_ORDER).any(|n| s.matches[n] == 0 || s.totals[n] == 0) {
        return 0.0;
    }
    let log_p: f64 = (0..MAX_ORDER)
        .map(|n| (s.matches[n] as f64 / s.totals[n] as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    100.0 * brevity_penalty(s.hyp_len, s.ref_len) * log_p.exp()
}

/// Corpus-level BLEU-4 with clipped counts and one brevity penalty.
pub fn corpus_bleu<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = NgramStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&ngram_stats(h, r));
    }
    Ok(bleu_from_stats(&total))
}

/// Sentence-level BLEU with add-one smoothing on the 2- to 4-gram
/// precisions. No unigram match gives 0.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let s = ngram_stats(hyp, reference);
    if s.matches[0] == 0 {
        return 0.0;
    }
    let mut log_p = (s.matches[0] as f64 / s.totals[0] as f64).ln();
    for n in 1..MAX_ORDER {
        log_p += ((s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64).ln();
    }
    100.0 * brevity_penalty(s.hyp_len, s.ref_len) * (log_p / MAX_ORDER as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_100() {
        let h = vec![t("the cat sat on the mat"), t("a b c d e")];
        assert_eq!(corpus_bleu(&h, &h).unwrap(), 100.0);
        assert_eq!(sentence_bleu(&h[0], &h[0]), 100.0);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(corpus_bleu(&[t("a b c d")], &[t("e f g h")]).unwrap(), 0.0);
    }

    #[test]
    fn clipping_and_brevity() {
        let s = ngram_stats(&t("the the the the"), &t("the cat the"));
        assert_eq!(s.matches[0], 2);
        assert_eq!(s.totals, [4, 3, 2, 1]);
        assert!((brevity_penalty(2, 4) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sentence_bleu_hand_value() {
        // hyp "a b c x", ref "a b c d": p1 = 3/4, p2 = (2+1)/(3+1), p3 = (1+1)/(2+1), p4 = (0+1)/(1+1)
        let v = sentence_bleu(&t("a b c x"), &t("a b c d"));
        let expect = 100.0 * (0.75f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn mismatch_is_error() {
        assert!(matches!(
            corpus_bleu(&[t("a")], &[]),
            Err(Error::LengthMismatch { left: 1, right: 0 })
        ));
    }
}
