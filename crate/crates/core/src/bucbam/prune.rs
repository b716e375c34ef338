//! Reattachment of undersized clusters to their nearest large neighbours.

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::math::sq_dist;
use crate::splitters::ClusterAssignment;

/// How undersized clusters are reattached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    /// Repeatedly dissolve the smallest undersized cluster: each member joins
    /// the cluster of its nearest neighbour outside the dissolved cluster.
    /// Stops when every cluster reaches the floor or one cluster is left.
    #[default]
    Progressive,
    /// One pass: members of undersized clusters join the cluster of their
    /// nearest neighbour among members of clusters already at the floor. When
    /// no cluster is at the floor the class collapses to one cluster.
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOutcome {
    pub assignment: ClusterAssignment,
    /// Set when no initial cluster reached the floor.
    pub fallback: bool,
    /// Number of samples that changed cluster.
    pub reassigned: usize,
}

/// Index of the closest candidate position; ties go to the lowest position.
fn nearest_among(f: &FeatureMatrix, query: usize, candidates: &[usize]) -> usize {
    let q = f.row(query);
    let mut best = (candidates[0], f64::INFINITY);
    for &c in candidates {
        let d = sq_dist(q, f.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Reattaches clusters smaller than `min_size` by Euclidean 1-NN. Rows of
/// `features_of_view` are the class members in `a.sample_indices` order.
pub fn prune_small_clusters(
    a: &ClusterAssignment,
    features_of_view: &FeatureMatrix,
    min_size: usize,
    strategy: PruneStrategy,
) -> PruneOutcome {
    let large: Vec<usize> = (0..a.len()).filter(|&j| a.sizes[a.member_of[j]] >= min_size).collect();
    let fallback = large.is_empty();
    if large.len() == a.len() {
        return PruneOutcome { assignment: a.clone(), fallback, reassigned: 0 };
    }
    if strategy == PruneStrategy::Progressive {
        let assignment = dissolve(a, features_of_view, min_size);
        let reassigned = count_moved(a, &assignment);
        return PruneOutcome { assignment, fallback, reassigned };
    }
    if fallback {
        let assignment = ClusterAssignment::single(a.class_id, a.sample_indices.clone());
        let reassigned = count_moved(a, &assignment);
        return PruneOutcome { assignment, fallback, reassigned };
    }
    let mut raw = a.member_of.clone();
    let mut reassigned = 0;
    for j in 0..a.len() {
        if a.sizes[a.member_of[j]] < min_size {
            raw[j] = a.member_of[nearest_among(features_of_view, j, &large)];
            reassigned += 1;
        }
    }
    PruneOutcome {
        assignment: ClusterAssignment::compacted(a.class_id, a.sample_indices.clone(), &raw),
        fallback: false,
        reassigned,
    }
}

fn dissolve(a: &ClusterAssignment, f: &FeatureMatrix, min_size: usize) -> ClusterAssignment {
    let mut member_of = a.member_of.clone();
    let mut sizes = a.sizes.clone();
    loop {
        let alive: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > 0).collect();
        if alive.len() <= 1 {
            break;
        }
        let smallest = *alive
            .iter()
            .min_by_key(|&&c| (sizes[c], c))
            .expect("at least two clusters");
        if sizes[smallest] >= min_size {
            break;
        }
        let others: Vec<usize> = (0..member_of.len()).filter(|&j| member_of[j] != smallest).collect();
        let movers: Vec<usize> = (0..member_of.len()).filter(|&j| member_of[j] == smallest).collect();
        for j in movers {
            let target = member_of[nearest_among(f, j, &others)];
            member_of[j] = target;
            sizes[target] += 1;
        }
        sizes[smallest] = 0;
    }
    ClusterAssignment::compacted(a.class_id, a.sample_indices.clone(), &member_of)
}

fn count_moved(before: &ClusterAssignment, after: &ClusterAssignment) -> usize {
    // Cluster ids are renumbered, so count samples whose old cluster is not
    // the majority source of their new cluster.
    let mut votes = vec![vec![0usize; before.k]; after.k];
    for (&o, &n) in before.member_of.iter().zip(&after.member_of) {
        votes[n][o] += 1;
    }
    let keep: usize = votes.iter().map(|v| v.iter().copied().max().unwrap_or(0)).sum();
    before.len() - keep
}
