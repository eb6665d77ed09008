//! Random removal of cluster members, simulating a weaker annotator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorefClusterSet, Span};
use crate::{Error, Result};

/// Removes `round(fraction * members)` randomly chosen mentions, one at a
/// time, only ever from clusters that still have more than two members. Stops
/// early when no cluster can lose a member. For a fixed seed the removals at a
/// larger fraction extend those at a smaller one.
pub fn prune_clusters(clusters: &CorefClusterSet, fraction: f64, seed: u64) -> Result<CorefClusterSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("pruning fraction {fraction} outside [0, 1]")));
    }
    let target = (fraction * clusters.num_mentions() as f64).round() as usize;
    let mut groups: Vec<Vec<Span>> = clusters.clusters().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..target {
        let eligible: Vec<(usize, usize)> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.len() > 2)
            .flat_map(|(c, g)| (0..g.len()).map(move |i| (c, i)))
            .collect();
        if eligible.is_empty() {
            break;
        }
        let (c, i) = eligible[rng.gen_range(0..eligible.len())];
        groups[c].remove(i);
    }
    CorefClusterSet::new(groups)
}
