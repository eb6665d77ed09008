use serde::{Deserialize, Serialize};

use super::clusters::{CorefClusterSet, Span};
use crate::{Error, Result};

/// Reserved token placed between the sentences of a window.
pub const SEPARATOR: &str = "_eos";

pub type Sentence = Vec<String>;

/// A parallel document with source-side coreference clusters.
///
/// Cluster spans index the document's source words counted across sentences
/// without separators (1-based), and may not cross a sentence boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences_src: Vec<Sentence>,
    pub sentences_tgt: Vec<Sentence>,
    pub clusters: CorefClusterSet,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        sentences_src: Vec<Sentence>,
        sentences_tgt: Vec<Sentence>,
        clusters: CorefClusterSet,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            sentences_src,
            sentences_tgt,
            clusters,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason,
        };
        if self.sentences_src.is_empty() {
            return Err(Error::EmptyDocument);
        }
        if self.sentences_src.len() != self.sentences_tgt.len() {
            return Err(invalid(format!(
                "{} source vs {} target sentences",
                self.sentences_src.len(),
                self.sentences_tgt.len()
            )));
        }
        let has_sep = |s: &Sentence| s.iter().any(|t| t == SEPARATOR);
        if self.sentences_src.iter().chain(&self.sentences_tgt).any(has_sep) {
            return Err(invalid(format!("sentence contains the separator `{SEPARATOR}`")));
        }
        let bounds = self.sentence_bounds();
        for span in self.clusters.spans() {
            match bounds.iter().position(|&(lo, hi)| lo <= span.start && span.start <= hi) {
                Some(k) if span.end <= bounds[k].1 => {}
                Some(_) => return Err(invalid(format!("span {span} crosses a sentence boundary"))),
                None => {
                    return Err(Error::SpanOutOfRange {
                        start: span.start,
                        end: span.end,
                        len: self.sentences_src.iter().map(Vec::len).sum(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences_src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences_src.is_empty()
    }

    /// 1-based inclusive word range of every source sentence; empty sentences
    /// yield `lo > hi`.
    fn sentence_bounds(&self) -> Vec<(usize, usize)> {
        let mut next = 1;
        self.sentences_src
            .iter()
            .map(|s| {
                let b = (next, next + s.len() - 1);
                next += s.len();
                b
            })
            .collect()
    }
}

/// One m-to-m unit: `m` source and `m` target sentences (leading ones may be
/// empty padding), their separator-joined forms, and the clusters that
/// survive inside the window, indexed into `src_joined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentWindow {
    pub doc_id: String,
    /// Index of the document sentence this window ends at.
    pub index: usize,
    pub src_sentences: Vec<Sentence>,
    pub tgt_sentences: Vec<Sentence>,
    pub src_joined: Sentence,
    pub tgt_joined: Sentence,
    pub clusters: CorefClusterSet,
}

/// Concatenates sentences with exactly one separator between neighbours.
/// Empty sentences contribute no tokens but still receive their separator.
pub fn join_with_separator(sentences: &[Sentence]) -> Sentence {
    let mut out = Vec::with_capacity(sentences.iter().map(Vec::len).sum::<usize>() + sentences.len());
    for (k, s) in sentences.iter().enumerate() {
        if k > 0 {
            out.push(SEPARATOR.to_string());
        }
        out.extend(s.iter().cloned());
    }
    out
}

/// Inverse of [`join_with_separator`] for separator-free sentences.
pub fn split_by_separator(seq: &[String]) -> Vec<Sentence> {
    seq.split(|t| t == SEPARATOR).map(<[String]>::to_vec).collect()
}

/// The last sentence of a joined sequence, the m-to-m output convention.
pub fn last_sentence(seq: &[String]) -> &[String] {
    match seq.iter().rposition(|t| t == SEPARATOR) {
        Some(p) => &seq[p + 1..],
        None => seq,
    }
}

/// 1-based positions of the separator tokens in a joined sequence.
pub fn separator_positions(seq: &[String]) -> Vec<usize> {
    seq.iter()
        .enumerate()
        .filter(|(_, t)| *t == SEPARATOR)
        .map(|(i, _)| i + 1)
        .collect()
}

/// One window per sentence; window `k` ends at sentence `k` and the first
/// `m - 1` windows are left-padded with empty sentences.
pub fn sliding_windows(doc: &Document, m: usize) -> Result<Vec<DocumentWindow>> {
    if m == 0 {
        return Err(Error::InvalidArgument("window size m must be at least 1".into()));
    }
    doc.validate()?;
    let bounds = doc.sentence_bounds();
    let n = doc.len();
    let mut windows = Vec::with_capacity(n);
    for k in 0..n {
        let pick = |sents: &[Sentence]| -> Vec<Sentence> {
            (0..m)
                .map(|slot| {
                    // slot m-1 is sentence k
                    (k + slot + 1).checked_sub(m).map_or_else(Vec::new, |i| sents[i].clone())
                })
                .collect()
        };
        let src_sentences = pick(&doc.sentences_src);
        let tgt_sentences = pick(&doc.sentences_tgt);

        // Offset of every in-window document sentence inside `src_joined`.
        let mut offsets = vec![None; n];
        let mut pos = 0;
        for slot in 0..m {
            if let Some(i) = (k + slot + 1).checked_sub(m) {
                offsets[i] = Some(pos);
            }
            pos += src_sentences[slot].len() + 1;
        }
        let clusters = doc.clusters.filter_map_spans(|s| {
            let sent = bounds.iter().position(|&(lo, hi)| lo <= s.start && s.start <= hi)?;
            let base = offsets[sent]?;
            let shift = |p: usize| p - bounds[sent].0 + 1 + base;
            Some(Span::new(shift(s.start), shift(s.end)))
        });

        windows.push(DocumentWindow {
            doc_id: doc.doc_id.clone(),
            index: k,
            src_joined: join_with_separator(&src_sentences),
            tgt_joined: join_with_separator(&tgt_sentences),
            src_sentences,
            tgt_sentences,
            clusters,
        });
    }
    Ok(windows)
}
