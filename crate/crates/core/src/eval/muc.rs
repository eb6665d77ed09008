//! Link-based MUC coreference scoring.

use serde::Serialize;

use crate::corpus::CorefClusterSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MucResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Numerators and denominators, summable across documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MucCounts {
    pub recall_num: usize,
    pub recall_den: usize,
    pub precision_num: usize,
    pub precision_den: usize,
}

impl MucCounts {
    pub fn add(&mut self, o: &MucCounts) {
        self.recall_num += o.recall_num;
        self.recall_den += o.recall_den;
        self.precision_num += o.precision_num;
        self.precision_den += o.precision_den;
    }

    pub fn result(&self) -> Result<MucResult> {
        if self.recall_den == 0 {
            return Err(Error::DegenerateGold);
        }
        let recall = self.recall_num as f64 / self.recall_den as f64;
        let precision = if self.precision_den == 0 {
            0.0
        } else {
            self.precision_num as f64 / self.precision_den as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(MucResult { precision, recall, f1 })
    }
}

/// Σ (|K| - |partition of K by `response`|) and Σ (|K| - 1) over `key`.
fn links(key: &CorefClusterSet, response: &CorefClusterSet) -> (usize, usize) {
    let mut num = 0;
    let mut den = 0;
    for cluster in key.clusters() {
        let mut parts: Vec<Option<usize>> = Vec::new();
        let mut unmatched = 0;
        for span in cluster {
            match response.cluster_of(span) {
                Some(id) if !parts.contains(&Some(id)) => parts.push(Some(id)),
                Some(_) => {}
                None => unmatched += 1,
            }
        }
        let partitions = parts.len() + unmatched;
        num += cluster.len() - partitions;
        den += cluster.len() - 1;
    }
    (num, den)
}

pub fn muc_counts(predicted: &CorefClusterSet, gold: &CorefClusterSet) -> MucCounts {
    let (rn, rd) = links(gold, predicted);
    let (pn, pd) = links(predicted, gold);
    MucCounts {
        recall_num: rn,
        recall_den: rd,
        precision_num: pn,
        precision_den: pd,
    }
}

pub fn muc_score(predicted: &CorefClusterSet, gold: &CorefClusterSet) -> Result<MucResult> {
    muc_counts(predicted, gold).result()
}
