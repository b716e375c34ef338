//! Per-cluster classifiers and the cross-score matrix they induce.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::negatives::sample_diverse_negatives;
use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::linear::{score, train_binary, BinaryLinearModel, LinearConfig, LossKind};
use crate::rng::{derive_seed, tags};
use crate::splitters::ClusterAssignment;

/// `m[k][l]` is the mean score of cluster k's classifier over cluster l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub class_id: usize,
    pub m: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn new(class_id: usize, m: Vec<Vec<f64>>) -> Result<Self> {
        let n = m.len();
        if n == 0 || m.iter().any(|r| r.len() != n) {
            return Err(Error::shape("similarity matrix must be square and non-empty"));
        }
        if m.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("similarity entries must lie in [0, 1]"));
        }
        Ok(Self { class_id, m })
    }

    pub fn size(&self) -> usize {
        self.m.len()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.m[k][l]
    }

    pub fn to_feature_matrix(&self) -> FeatureMatrix {
        FeatureMatrix::from_rows(&self.m).expect("entries are finite")
    }
}

/// Where the diverse negatives of a cluster classifier come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePool {
    /// Every class except the one being split. Sibling clusters of the same
    /// subconcept would otherwise leak into the negatives and pull the
    /// cross-scores between them below the merge threshold.
    #[default]
    OtherClasses,
    /// Every sample outside the positive cluster, siblings included.
    AllButCluster,
}

/// Seed of the negatives drawn for cluster `cluster` of class `class_id`.
pub fn negatives_seed(seed: u64, class_id: usize, cluster: usize) -> u64 {
    derive_seed(seed, &[tags::NEGATIVES, class_id as u64, cluster as u64])
}

/// One logistic classifier per cluster: the cluster's samples against
/// `round(ratio × size)` diverse negatives drawn from `pool`.
/// `d.features()` must hold the representation being clustered.
pub fn train_cluster_classifiers(
    pruned: &ClusterAssignment,
    d: &LabeledDataset,
    cfg: &LinearConfig,
    negatives_per_positive: f64,
    pool: NegativePool,
    seed: u64,
) -> Result<Vec<BinaryLinearModel>> {
    if cfg.loss != LossKind::Logistic {
        return Err(Error::invalid("cluster classifiers need probabilistic (logistic) scores"));
    }
    let members = pruned.members();
    members
        .par_iter()
        .enumerate()
        .map(|(k, pos)| {
            let global: Vec<usize> = pos.iter().map(|&j| pruned.sample_indices[j]).collect();
            let seed_k = negatives_seed(seed, pruned.class_id, k);
            let count = (negatives_per_positive * global.len() as f64).round() as usize;
            let neg = match pool {
                NegativePool::OtherClasses => sample_diverse_negatives(d, count, &pruned.sample_indices, seed_k),
                NegativePool::AllButCluster => sample_diverse_negatives(d, count, &global, seed_k),
            }?; 
            let positives = d.features().select_rows(&global);
            let negatives = d.features().select_rows(&neg.indices);
            train_binary(&positives, &negatives, cfg)
        })
        .collect()
}

/// Mean score of every classifier over every cluster. `features_of_view`
/// rows follow `pruned.sample_indices`.
pub fn build_similarity_matrix(
    classifiers: &[BinaryLinearModel],
    pruned: &ClusterAssignment,
    features_of_view: &FeatureMatrix,
) -> Result<SimilarityMatrix> {
    if classifiers.len() != pruned.k {
        return Err(Error::shape(format!(
            "{} classifiers for {} clusters",
            classifiers.len(),
            pruned.k
        )));
    }
    let members = pruned.members();
    let m = classifiers
        .iter()
        .map(|psi| {
            let s = score(psi, features_of_view)?;
            Ok(members
                .iter()
                .map(|mem| mem.iter().map(|&j| s[j]).sum::<f64>() / mem.len() as f64)
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    SimilarityMatrix::new(pruned.class_id, m)
}
