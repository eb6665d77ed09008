//! Documents, m-to-m windows, subword segmentation and cluster bookkeeping.

pub mod bpe;
pub mod clusters;
pub mod io;
pub mod synthetic;
pub mod window;

pub use bpe::{detokenize, learn_subword, remap_spans, BpeModel, SubwordMap};
pub use clusters::{CorefClusterSet, Span};
pub use io::WindowRecord;
pub use window::{
    join_with_separator, last_sentence, separator_positions, sliding_windows, split_by_separator, Document,
    DocumentWindow, Sentence, SEPARATOR,
};

use crate::Result;

/// Windows every document and applies `bpe` to both sides, moving clusters to
/// subword coordinates.
pub fn preprocess(docs: &[Document], m: usize, bpe: &BpeModel) -> Result<Vec<WindowRecord>> {
    let mut out = Vec::new();
    for doc in docs {
        for w in sliding_windows(doc, m)? {
            let (src, map) = bpe.segment(&w.src_joined);
            let (tgt, _) = bpe.segment(&w.tgt_joined);
            let clusters = remap_spans(&w.clusters, &map)?;
            out.push(WindowRecord { src, tgt, clusters });
        }
    }
    Ok(out)
}

/// Learns merges from every source and target sentence of `docs`.
pub fn learn_from_documents(docs: &[Document], num_merges: usize) -> Result<BpeModel> {
    let corpus: Vec<Sentence> = docs
        .iter()
        .flat_map(|d| d.sentences_src.iter().chain(&d.sentences_tgt).cloned())
        .collect();
    learn_subword(&corpus, num_merges)
}

#[cfg(test)]
mod tests {
    use super::synthetic::{synthetic_documents, SyntheticSpec};
    use super::*;

    #[test]
    fn remapped_mentions_detokenize_to_original_words() {
        let docs = synthetic_documents(&SyntheticSpec::default());
        let bpe = learn_from_documents(&docs, 15).unwrap();
        let records = preprocess(&docs, 3, &bpe).unwrap();
        let windows: Vec<DocumentWindow> = docs.iter().flat_map(|d| sliding_windows(d, 3).unwrap()).collect();
        assert_eq!(records.len(), windows.len());
        for (rec, win) in records.iter().zip(&windows) {
            assert_eq!(detokenize(&rec.src), win.src_joined);
            for (sub, word) in rec.clusters.spans().zip(win.clusters.spans()) {
                let pieces = &rec.src[sub.start - 1..sub.end];
                assert_eq!(detokenize(pieces), &win.src_joined[word.start - 1..word.end]);
            }
        }
    }
}
