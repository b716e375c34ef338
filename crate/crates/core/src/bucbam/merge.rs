//! Merge rules over a cluster similarity matrix and the union-find that
//! turns the pairwise relation into a partition.

use serde::{Deserialize, Serialize};

use super::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Both cross-scores above `s_high`.
    Ss,
    /// One cross-score above `s_high`, the other above `s_med`.
    As,
}

impl std::str::FromStr for MergeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(MergeMode::Ss),
            "as" => Ok(MergeMode::As),
            other => Err(format!("unknown merge mode `{other}` (expected ss or as)")),
        }
    }
}

/// Groups of pruned-cluster indices that merge into one finer class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergePlan {
    pub class_id: usize,
    /// Each component is sorted; components are ordered by their smallest member.
    pub components: Vec<Vec<usize>>,
    pub k_merged: usize,
}

impl MergePlan {
    /// Final cluster id of every pruned cluster.
    pub fn cluster_map(&self) -> Vec<usize> {
        let n = self.components.iter().map(Vec::len).sum();
        let mut map = vec![0; n];
        for (c, comp) in self.components.iter().enumerate() {
            for &k in comp {
                map[k] = c;
            }
        }
        map
    }
}

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    /// Sets sorted internally and ordered by smallest member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for x in 0..n {
            let r = self.find(x);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].push(x);
        }
        out
    }
}

/// Whether clusters `k` and `l` are similar under `mode`.
pub fn related(m: &SimilarityMatrix, k: usize, l: usize, mode: MergeMode, s_high: f64, s_med: f64) -> bool {
    let (a, b) = (m.get(k, l), m.get(l, k));
    match mode {
        MergeMode::Ss => a > s_high && b > s_high,
        MergeMode::As => (a > s_high && b > s_med) || (b > s_high && a > s_med),
    }
}

/// Connected components of the similarity relation.
pub fn merge_clusters(m: &SimilarityMatrix, mode: MergeMode, s_high: f64, s_med: f64) -> MergePlan {
    let n = m.size();
    let mut uf = UnionFind::new(n);
    for k in 0..n {
        for l in k + 1..n {
            if related(m, k, l, mode, s_high, s_med) {
                uf.union(k, l);
            }
        }
    }
    let components = uf.components();
    MergePlan { class_id: m.class_id, k_merged: components.len(), components }
}
