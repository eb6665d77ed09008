//! Byte-pair-encoding subword segmentation.
//!
//! Words are split into characters with an end-of-word marker fused onto the
//! last character, and the most frequent adjacent symbol pair is merged
//! repeatedly. Segmented output marks every non-final piece with a trailing
//! `@@`, so `lower` may become `low@@ er`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::clusters::{CorefClusterSet, Span};
use super::window::SEPARATOR;
use crate::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

/// Tokens that are never split or merged.
pub fn is_reserved(token: &str) -> bool {
    token == SEPARATOR || (token.starts_with('<') && token.ends_with('>') && token.len() > 2)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

/// Per-word `(first, last)` subword positions (1-based, inclusive) produced
/// when segmenting one token sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubwordMap {
    pub offsets: Vec<(usize, usize)>,
}

impl SubwordMap {
    /// The map of a sequence in which no word was split.
    pub fn identity(len: usize) -> Self {
        SubwordMap {
            offsets: (1..=len).map(|i| (i, i)).collect(),
        }
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    if let Some(last) = out.last_mut() {
        last.push_str(END_OF_WORD);
    }
    out
}

fn merge_pair(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

/// Learns up to `num_merges` merges from a corpus of token sequences.
///
/// The most frequent adjacent pair wins; ties go to the lexicographically
/// smallest pair. Reserved tokens are ignored.
pub fn learn_subword(corpus: &[Vec<String>], num_merges: usize) -> Result<BpeModel> {
    // word types in first-occurrence order, with counts
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut words: Vec<(Vec<String>, usize)> = Vec::new();
    for tok in corpus.iter().flatten() {
        if is_reserved(tok) || tok.is_empty() {
            continue;
        }
        match index.get(tok.as_str()) {
            Some(&i) => words[i].1 += 1,
            None => {
                index.insert(tok, words.len());
                words.push((initial_symbols(tok), 1));
            }
        }
    }
    if words.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut model = BpeModel::default();
    for _ in 0..num_merges {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, freq) in &words {
            for w in symbols.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += freq;
            }
        }
        let Some(best) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((a, b), _)| (a.to_string(), b.to_string()))
        else {
            break;
        };
        for (symbols, _) in &mut words {
            merge_pair(symbols, &best.0, &best.1);
        }
        model.push(best);
    }
    Ok(model)
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let mut m = BpeModel::default();
        for pair in merges {
            m.push(pair);
        }
        m
    }

    fn push(&mut self, pair: (String, String)) {
        self.ranks.entry(pair.clone()).or_insert(self.merges.len());
        self.merges.push(pair);
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Pieces of one word in output form (`@@` on every non-final piece).
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        if is_reserved(word) || word.is_empty() {
            return vec![word.to_string()];
        }
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some((a, b)) => merge_pair(&mut symbols, &a, &b),
                None => break,
            }
        }
        let n = symbols.len();
        symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.strip_suffix(END_OF_WORD).map(str::to_string).unwrap_or(s)
                } else {
                    s + CONTINUATION
                }
            })
            .collect()
    }

    /// Segments a token sequence and records where each word landed.
    pub fn segment(&self, tokens: &[String]) -> (Vec<String>, SubwordMap) {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::with_capacity(tokens.len());
        let mut offsets = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let pieces = cache
                .entry(tok.as_str())
                .or_insert_with(|| self.segment_word(tok));
            let first = out.len() + 1;
            out.extend(pieces.iter().cloned());
            offsets.push((first, out.len()));
        }
        (out, SubwordMap { offsets })
    }

    /// One merge per line, the two symbols separated by a single space.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (a, b) in &self.merges {
            text.push_str(a);
            text.push(' ');
            text.push_str(b);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: "expected two space-separated symbols".into(),
                    })
                }
            }
        }
        Ok(BpeModel::from_merges(merges))
    }
}

/// Joins `@@`-continued pieces back into words.
pub fn detokenize(pieces: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for p in pieces {
        match p.strip_suffix(CONTINUATION) {
            Some(stem) => cur.push_str(stem),
            None => {
                cur.push_str(p);
                out.push(std::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Moves word-indexed spans to subword coordinates: `(i, j)` becomes
/// `(first(i), last(j))`.
pub fn remap_spans(clusters: &CorefClusterSet, map: &SubwordMap) -> Result<CorefClusterSet> {
    let len = map.offsets.len();
    let mut out = Vec::with_capacity(clusters.len());
    for c in clusters.clusters() {
        let mut spans = Vec::with_capacity(c.len());
        for s in c {
            if s.end > len {
                return Err(Error::SpanOutOfRange {
                    start: s.start,
                    end: s.end,
                    len,
                });
            }
            spans.push(Span::new(map.offsets[s.start - 1].0, map.offsets[s.end - 1].1));
        }
        out.push(spans);
    }
    CorefClusterSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Independent pair counter: frequency of each adjacent symbol pair over
    /// the character+marker split of every word occurrence.
    fn oracle_top_pair(words: &[&str]) -> (String, String) {
        let mut best: Option<((String, String), usize)> = None;
        let mut all: Vec<(String, String)> = Vec::new();
        for w in words {
            let chars: Vec<String> = w.chars().map(|c| c.to_string()).collect();
            let mut syms = chars.clone();
            let last = syms.len() - 1;
            syms[last] = format!("{}</w>", syms[last]);
            for i in 0..syms.len() - 1 {
                all.push((syms[i].clone(), syms[i + 1].clone()));
            }
        }
        for p in &all {
            let c = all.iter().filter(|q| *q == p).count();
            let better = match &best {
                None => true,
                Some((bp, bc)) => c > *bc || (c == *bc && p < bp),
            };
            if better {
                best = Some((p.clone(), c));
            }
        }
        best.unwrap().0
    }

    #[test]
    fn zero_merges_splits_to_characters() {
        let m = learn_subword(&[toks("low lower")], 0).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.segment_word("low"), toks("l@@ o@@ w"));
    }

    #[test]
    fn first_merge_matches_pair_counter() {
        let corpus = vec![toks("low low lower")];
        let m = learn_subword(&corpus, 1).unwrap();
        assert_eq!(m.merges()[0], oracle_top_pair(&["low", "low", "lower"]));
        assert_eq!(m.merges()[0], ("l".to_string(), "o".to_string()));
    }

    #[test]
    fn learning_is_deterministic_and_respects_reserved_tokens() {
        let corpus = vec![toks("the cat _eos the hat _eos that"), toks("a cat sat")];
        let a = learn_subword(&corpus, 20).unwrap();
        let b = learn_subword(&corpus, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.merges().iter().all(|(x, y)| !x.contains('_') && !y.contains('_')));
        let (seg, _) = a.segment(&toks("the _eos cat"));
        assert!(seg.contains(&"_eos".to_string()));
        assert_eq!(detokenize(&seg), toks("the _eos cat"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(learn_subword(&[], 10), Err(Error::EmptyCorpus)));
        assert!(matches!(learn_subword(&[toks("_eos")], 10), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn remap_examples() {
        // "translation" split into two pieces
        let map = SubwordMap {
            offsets: vec![(1, 1), (2, 2), (3, 4)],
        };
        let c = CorefClusterSet::from_pairs(&[&[(1, 1), (3, 3)]]).unwrap();
        let r = remap_spans(&c, &map).unwrap();
        assert_eq!(r, CorefClusterSet::from_pairs(&[&[(1, 1), (3, 4)]]).unwrap());

        // word 2 splits into three pieces
        let map = SubwordMap {
            offsets: vec![(1, 1), (2, 4), (5, 5)],
        };
        let c = CorefClusterSet::from_pairs(&[&[(1, 2), (3, 3)]]).unwrap();
        let r = remap_spans(&c, &map).unwrap();
        assert_eq!(r, CorefClusterSet::from_pairs(&[&[(1, 4), (5, 5)]]).unwrap());

        let c = CorefClusterSet::from_pairs(&[&[(1, 1), (4, 4)]]).unwrap();
        let err = remap_spans(&c, &map).unwrap_err();
        assert!(err.to_string().starts_with("span out of range"));
    }

    #[test]
    fn save_and_load_merge_file() {
        let m = learn_subword(&[toks("banana bandana")], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bpe.merges");
        m.save(&p).unwrap();
        assert_eq!(BpeModel::load(&p).unwrap(), m);
        std::fs::write(&p, "a b c\n").unwrap();
        assert!(matches!(BpeModel::load(&p), Err(Error::Parse { line: 1, .. })));
    }
}
