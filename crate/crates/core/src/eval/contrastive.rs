//! Contrastive discourse test sets.
//!
//! File format: blocks separated by blank lines.
//!
//! ```text
//! category deixis
//! source i saw him _eos he left .
//! clusters [[[3,3],[5,5]]]
//! candidate ja videl ego _eos on ushel .
//! candidate ja videl ego _eos ona ushla .
//! gold 0
//! ```
//!
//! The `clusters` line is optional.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::synthetic::flip_pronoun;
use crate::corpus::{CorefClusterSet, Sentence, WindowRecord, SEPARATOR};
use crate::model::Model;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveItem {
    pub category: String,
    pub source: Sentence,
    pub clusters: CorefClusterSet,
    pub candidates: Vec<Sentence>,
    pub gold: usize,
}

impl ContrastiveItem {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 || self.gold >= self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "contrastive item needs at least two candidates and a gold index in range (got {} / {})",
                self.candidates.len(),
                self.gold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Per-category accuracy. An item counts as correct only when the gold
/// candidate's teacher-forced log-probability is strictly the highest.
pub fn contrastive_accuracy(model: &Model, items: &[ContrastiveItem]) -> Result<BTreeMap<String, Accuracy>> {
    let outcomes: Vec<bool> = items
        .par_iter()
        .map(|item| {
            item.validate()?;
            let src = model.vocab.encode(&item.source);
            let scores: Vec<f64> = item
                .candidates
                .iter()
                .map(|c| model.score_target(&src, &model.vocab.encode(c), &item.clusters))
                .collect::<Result<_>>()?;
            let g = scores[item.gold];
            Ok(scores.iter().enumerate().all(|(i, &s)| i == item.gold || s < g))
        })
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<String, Accuracy> = BTreeMap::new();
    for (item, ok) in items.iter().zip(outcomes) {
        let a = out.entry(item.category.clone()).or_default();
        a.total += 1;
        a.correct += ok as usize;
    }
    for a in out.values_mut() {
        a.accuracy = a.correct as f64 / a.total as f64;
    }
    Ok(out)
}

pub fn write_contrastive(path: &Path, items: &[ContrastiveItem]) -> Result<()> {
    let mut s = String::new();
    for (k, it) in items.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        s.push_str(&format!("category {}\n", it.category));
        s.push_str(&format!("source {}\n", it.source.join(" ")));
        if !it.clusters.is_empty() {
            s.push_str(&format!("clusters {}\n", it.clusters.to_json()));
        }
        for c in &it.candidates {
            s.push_str(&format!("candidate {}\n", c.join(" ")));
        }
        s.push_str(&format!("gold {}\n", it.gold));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_contrastive(path: &Path) -> Result<Vec<ContrastiveItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut items = Vec::new();
    let mut cur: Option<(ContrastiveItem, usize)> = None;
    let finish = |cur: Option<(ContrastiveItem, usize)>, items: &mut Vec<ContrastiveItem>| -> Result<()> {
        if let Some((it, line)) = cur {
            it.validate().map_err(|e| err(line, e.to_string()))?;
            items.push(it);
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            finish(cur.take(), &mut items)?;
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let toks = || rest.split_whitespace().map(String::from).collect::<Sentence>();
        let it = &mut cur
            .get_or_insert_with(|| {
                (
                    ContrastiveItem {
                        category: String::new(),
                        source: Vec::new(),
                        clusters: CorefClusterSet::empty(),
                        candidates: Vec::new(),
                        gold: usize::MAX,
                    },
                    n,
                )
            })
            .0;
        match key {
            "category" => it.category = rest.trim().to_string(),
            "source" => it.source = toks(),
            "clusters" => it.clusters = CorefClusterSet::from_json(rest.trim()).map_err(|e| err(n, e.to_string()))?,
            "candidate" => it.candidates.push(toks()),
            "gold" => it.gold = rest.trim().parse().map_err(|_| err(n, format!("bad gold index `{rest}`")))?,
            other => return Err(err(n, format!("unknown field `{other}`"))),
        }
    }
    finish(cur, &mut items)?;
    Ok(items)
}

/// Builds pronoun items from windows whose last target sentence contains a
/// gendered pronoun: the gold candidate is the reference and the contrast
/// flips the pronoun's gender.
pub fn pronoun_items(records: &[WindowRecord]) -> Vec<ContrastiveItem> {
    let mut out = Vec::new();
    for r in records {
        let last_sep = r.tgt.iter().rposition(|t| t == SEPARATOR).map_or(0, |p| p + 1);
        let Some(pos) = r.tgt[last_sep..].iter().position(|t| flip_pronoun(t).is_some()) else {
            continue;
        };
        let mut wrong = r.tgt.clone();
        wrong[last_sep + pos] = flip_pronoun(&r.tgt[last_sep + pos]).expect("checked").to_string();
        out.push(ContrastiveItem {
            category: "anaphora".into(),
            source: r.src.clone(),
            clusters: r.clusters.clone(),
            candidates: vec![r.tgt.clone(), wrong],
            gold: 0,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Sentence {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let items = vec![
            ContrastiveItem {
                category: "deixis".into(),
                source: t("a _eos b"),
                clusters: CorefClusterSet::from_pairs(&[&[(1, 1), (3, 3)]]).unwrap(),
                candidates: vec![t("x _eos y"), t("x _eos z")],
                gold: 1,
            },
            ContrastiveItem {
                category: "ellipsis-vp".into(),
                source: t("c"),
                clusters: CorefClusterSet::empty(),
                candidates: vec![t("q"), t("r"), t("s")],
                gold: 0,
            },
        ];
        write_contrastive(&p, &items).unwrap();
        assert_eq!(read_contrastive(&p).unwrap(), items);
    }

    #[test]
    fn bad_gold_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "category x\nsource a\ncandidate b\ncandidate c\ngold 5\n").unwrap();
        assert!(matches!(read_contrastive(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn pronoun_items_flip_last_sentence_only() {
        let r = WindowRecord {
            src: t("john sees . _eos they see ."),
            tgt: t("ela ve . _eos ele ve ."),
            clusters: CorefClusterSet::empty(),
        };
        let items = pronoun_items(&[r]);
        assert_eq!(items[0].candidates[1], t("ela ve . _eos ela ve ."));
    }
}
