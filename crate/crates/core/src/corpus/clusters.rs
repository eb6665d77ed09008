use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A mention span `(start, end)`, 1-based and inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }

    /// Zero-based row of the first token.
    pub fn first_row(&self) -> usize {
        self.start - 1
    }

    /// Zero-based row of the last token.
    pub fn last_row(&self) -> usize {
        self.end - 1
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// Coreference clusters over one token sequence.
///
/// Every cluster holds at least two non-overlapping spans and no span belongs
/// to two clusters. Spans inside a cluster are sorted and clusters are ordered
/// by their first span, so equal clusterings compare equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Span>>", into = "Vec<Vec<Span>>")]
pub struct CorefClusterSet {
    clusters: Vec<Vec<Span>>,
}

impl CorefClusterSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(clusters: Vec<Vec<Span>>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(clusters.len());
        for mut cluster in clusters {
            if cluster.len() < 2 {
                return Err(Error::InvalidClusters(format!(
                    "cluster with {} span(s); at least 2 required",
                    cluster.len()
                )));
            }
            for s in &cluster {
                if s.start < 1 || s.start > s.end {
                    return Err(Error::InvalidClusters(format!("malformed span {s}")));
                }
                if !seen.insert(*s) {
                    return Err(Error::InvalidClusters(format!("span {s} appears twice")));
                }
            }
            cluster.sort();
            if let Some(w) = cluster.windows(2).find(|w| w[0].overlaps(&w[1])) {
                return Err(Error::InvalidClusters(format!(
                    "overlapping spans {} and {} in one cluster",
                    w[0], w[1]
                )));
            }
            out.push(cluster);
        }
        out.sort();
        Ok(CorefClusterSet { clusters: out })
    }

    /// Builds a set from raw `(start, end)` pairs.
    pub fn from_pairs(clusters: &[&[(usize, usize)]]) -> Result<Self> {
        Self::new(
            clusters
                .iter()
                .map(|c| c.iter().map(|&(s, e)| Span::new(s, e)).collect())
                .collect(),
        )
    }

    pub fn clusters(&self) -> &[Vec<Span>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn num_mentions(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn spans(&self) -> impl Iterator<Item = &Span> {
        self.clusters.iter().flatten()
    }

    /// Index of the cluster containing `span`, if any.
    pub fn cluster_of(&self, span: &Span) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(span).is_ok())
    }

    /// Fails when any span ends past position `len`.
    pub fn check_range(&self, len: usize) -> Result<()> {
        match self.spans().find(|s| s.end > len) {
            Some(s) => Err(Error::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            }),
            None => Ok(()),
        }
    }

    /// Fails when a span covers any of the given 1-based positions.
    pub fn check_excludes(&self, positions: &[usize]) -> Result<()> {
        for s in self.spans() {
            if let Some(p) = positions.iter().find(|&&p| s.contains(p)) {
                return Err(Error::InvalidClusters(format!(
                    "span {s} covers reserved position {p}"
                )));
            }
        }
        Ok(())
    }

    /// Keeps clusters passing `keep` after restricting each to the spans for
    /// which `map` returns a value; clusters left with fewer than two spans
    /// are removed.
    pub fn filter_map_spans(&self, mut map: impl FnMut(&Span) -> Option<Span>) -> Self {
        let clusters = self
            .clusters
            .iter()
            .map(|c| c.iter().filter_map(&mut map).collect::<Vec<_>>())
            .filter(|c| c.len() >= 2)
            .collect();
        // A restriction of a valid set stays valid as long as `map` is injective
        // and order-preserving, which every caller guarantees.
        let mut out = CorefClusterSet { clusters };
        for c in &mut out.clusters {
            c.sort();
        }
        out.clusters.sort();
        out
    }

    /// Sidecar line form: `[[[s,e],[s,e]],[[s,e],...]]`.
    pub fn to_json(&self) -> String {
        let parts: Vec<String> = self
            .clusters
            .iter()
            .map(|c| {
                let spans: Vec<String> =
                    c.iter().map(|s| format!("[{},{}]", s.start, s.end)).collect();
                format!("[{}]", spans.join(","))
            })
            .collect();
        format!("[{}]", parts.join(","))
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let raw: Vec<Vec<[usize; 2]>> = serde_json::from_str(line)?;
        Self::new(
            raw.into_iter()
                .map(|c| c.into_iter().map(|[s, e]| Span::new(s, e)).collect())
                .collect(),
        )
    }
}

impl TryFrom<Vec<Vec<Span>>> for CorefClusterSet {
    type Error = Error;

    fn try_from(value: Vec<Vec<Span>>) -> Result<Self> {
        CorefClusterSet::new(value)
    }
}

impl From<CorefClusterSet> for Vec<Vec<Span>> {
    fn from(value: CorefClusterSet) -> Self {
        value.clusters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_json_round_trip() {
        let set = CorefClusterSet::from_pairs(&[&[(7, 8), (3, 3)], &[(1, 1), (5, 5)]]).unwrap();
        assert_eq!(set.clusters()[0], vec![Span::new(1, 1), Span::new(5, 5)]);
        assert_eq!(set.to_json(), "[[[1,1],[5,5]],[[3,3],[7,8]]]");
        assert_eq!(CorefClusterSet::from_json(&set.to_json()).unwrap(), set);
    }

    #[test]
    fn rejects_invalid_clusters() {
        assert!(CorefClusterSet::from_pairs(&[&[(1, 1)]]).is_err());
        assert!(CorefClusterSet::from_pairs(&[&[(1, 2), (2, 3)]]).is_err());
        assert!(CorefClusterSet::from_pairs(&[&[(0, 1), (3, 3)]]).is_err());
        assert!(CorefClusterSet::from_pairs(&[&[(2, 1), (3, 3)]]).is_err());
        assert!(CorefClusterSet::from_pairs(&[&[(1, 1), (3, 3)], &[(1, 1), (5, 5)]]).is_err());
        assert!(CorefClusterSet::from_json("[[[1,1]]]").is_err());
        assert!(CorefClusterSet::from_json("not json").is_err());
    }

    #[test]
    fn range_and_reserved_checks() {
        let set = CorefClusterSet::from_pairs(&[&[(1, 1), (4, 5)]]).unwrap();
        assert!(set.check_range(5).is_ok());
        assert!(matches!(
            set.check_range(4),
            Err(Error::SpanOutOfRange { .. })
        ));
        assert!(set.check_excludes(&[2, 3]).is_ok());
        assert!(set.check_excludes(&[5]).is_err());
    }
}
