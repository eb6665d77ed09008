//! Raw corpus readers and the preprocessed window file formats.
//!
//! Raw input is a pair of text files with one tokenised sentence per line and
//! a blank line between documents, plus an optional cluster sidecar with one
//! line per document. Preprocessed windows live in three line-aligned files
//! sharing a prefix: `<prefix>.src`, `<prefix>.tgt` and `<prefix>.clusters`.

use std::fs;
use std::path::{Path, PathBuf};

use super::clusters::CorefClusterSet;
use super::window::{Document, Sentence};
use crate::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn tokens(line: &str) -> Sentence {
    line.split_whitespace().map(String::from).collect()
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.into(),
    }
}

/// Reads a cluster sidecar: one JSON cluster list per line.
pub fn read_cluster_sidecar(path: &Path) -> Result<Vec<CorefClusterSet>> {
    read(path)?
        .lines()
        .enumerate()
        .map(|(i, line)| {
            CorefClusterSet::from_json(line.trim()).map_err(|e| parse_err(path, i + 1, e.to_string()))
        })
        .collect()
}

pub fn write_cluster_sidecar(path: &Path, sets: &[CorefClusterSet]) -> Result<()> {
    let mut text = String::new();
    for s in sets {
        text.push_str(&s.to_json());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_documents(text: &str) -> Vec<Vec<Sentence>> {
    let mut docs = Vec::new();
    let mut cur = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                docs.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(tokens(line));
        }
    }
    if !cur.is_empty() {
        docs.push(cur);
    }
    docs
}

/// Reads paired raw files into documents; clusters default to empty when no
/// sidecar is given.
pub fn read_parallel_documents(src: &Path, tgt: &Path, clusters: Option<&Path>) -> Result<Vec<Document>> {
    let src_docs = split_documents(&read(src)?);
    let tgt_docs = split_documents(&read(tgt)?);
    if src_docs.len() != tgt_docs.len() {
        return Err(parse_err(
            tgt,
            0,
            format!("{} source documents vs {} target documents", src_docs.len(), tgt_docs.len()),
        ));
    }
    let sidecar = match clusters {
        Some(p) => {
            let sets = read_cluster_sidecar(p)?;
            if sets.len() != src_docs.len() {
                return Err(parse_err(
                    p,
                    sets.len(),
                    format!("{} cluster lines for {} documents", sets.len(), src_docs.len()),
                ));
            }
            sets
        }
        None => vec![CorefClusterSet::empty(); src_docs.len()],
    };
    src_docs
        .into_iter()
        .zip(tgt_docs)
        .zip(sidecar)
        .enumerate()
        .map(|(i, ((s, t), c))| Document::new(format!("doc{i}"), s, t, c))
        .collect()
}

/// Writes raw paired files (and sidecar) for a set of documents.
pub fn write_parallel_documents(docs: &[Document], src: &Path, tgt: &Path, clusters: &Path) -> Result<()> {
    let mut s = String::new();
    let mut t = String::new();
    for (k, d) in docs.iter().enumerate() {
        if k > 0 {
            s.push('\n');
            t.push('\n');
        }
        for (a, b) in d.sentences_src.iter().zip(&d.sentences_tgt) {
            s.push_str(&a.join(" "));
            s.push('\n');
            t.push_str(&b.join(" "));
            t.push('\n');
        }
    }
    fs::write(src, s).map_err(|e| Error::io(src, e))?;
    fs::write(tgt, t).map_err(|e| Error::io(tgt, e))?;
    let sets: Vec<CorefClusterSet> = docs.iter().map(|d| d.clusters.clone()).collect();
    write_cluster_sidecar(clusters, &sets)
}

/// One preprocessed window: joined source and target token sequences and the
/// clusters indexed into the source.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowRecord {
    pub src: Sentence,
    pub tgt: Sentence,
    pub clusters: CorefClusterSet,
}

pub fn window_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    (with("src"), with("tgt"), with("clusters"))
}

pub fn write_windows(prefix: &Path, records: &[WindowRecord]) -> Result<()> {
    let (sp, tp, cp) = window_paths(prefix);
    let join = |f: fn(&WindowRecord) -> &Sentence| {
        records.iter().map(|r| f(r).join(" ") + "\n").collect::<String>()
    };
    fs::write(&sp, join(|r| &r.src)).map_err(|e| Error::io(&sp, e))?;
    fs::write(&tp, join(|r| &r.tgt)).map_err(|e| Error::io(&tp, e))?;
    let sets: Vec<CorefClusterSet> = records.iter().map(|r| r.clusters.clone()).collect();
    write_cluster_sidecar(&cp, &sets)
}

/// Reads `<prefix>.src` plus `<prefix>.tgt` and `<prefix>.clusters` when
/// present. Missing targets yield empty target sequences.
pub fn read_windows(prefix: &Path) -> Result<Vec<WindowRecord>> {
    let (sp, tp, cp) = window_paths(prefix);
    let src: Vec<Sentence> = read(&sp)?.lines().map(tokens).collect();
    let tgt: Vec<Sentence> = if tp.exists() {
        read(&tp)?.lines().map(tokens).collect()
    } else {
        vec![Sentence::new(); src.len()]
    };
    if tgt.len() != src.len() {
        return Err(parse_err(&tp, tgt.len(), format!("{} target lines for {} source lines", tgt.len(), src.len())));
    }
    let clusters = if cp.exists() {
        let sets = read_cluster_sidecar(&cp)?;
        if sets.len() != src.len() {
            return Err(parse_err(&cp, sets.len(), format!("{} cluster lines for {} windows", sets.len(), src.len())));
        }
        for (i, (s, c)) in src.iter().zip(&sets).enumerate() {
            c.check_range(s.len()).map_err(|e| parse_err(&cp, i + 1, e.to_string()))?;
        }
        sets
    } else {
        vec![CorefClusterSet::empty(); src.len()]
    };
    Ok(src
        .into_iter()
        .zip(tgt)
        .zip(clusters)
        .map(|((src, tgt), clusters)| WindowRecord { src, tgt, clusters })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_documents_split_on_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("a.src");
        let t = dir.path().join("a.tgt");
        let c = dir.path().join("a.clusters");
        fs::write(&s, "i saw it .\nit ran .\n\nhello .\n").unwrap();
        fs::write(&t, "ja videl .\non bezhal .\n\nprivet .\n").unwrap();
        fs::write(&c, "[[[3,3],[5,5]]]\n[]\n").unwrap();
        let docs = read_parallel_documents(&s, &t, Some(&c)).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].len(), 2);
        assert_eq!(docs[0].clusters.len(), 1);
        assert_eq!(docs[1].sentences_tgt[0], tokens("privet ."));
    }

    #[test]
    fn malformed_sidecar_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("x.clusters");
        fs::write(&c, "[]\n[[[1,1]]]\n").unwrap();
        match read_cluster_sidecar(&c) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn window_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("train");
        let recs = vec![
            WindowRecord {
                src: tokens("a _eos b"),
                tgt: tokens("A _eos B"),
                clusters: CorefClusterSet::from_pairs(&[&[(1, 1), (3, 3)]]).unwrap(),
            },
            WindowRecord {
                src: tokens("c"),
                tgt: tokens("C"),
                clusters: CorefClusterSet::empty(),
            },
        ];
        write_windows(&prefix, &recs).unwrap();
        assert_eq!(read_windows(&prefix).unwrap(), recs);
    }
}
