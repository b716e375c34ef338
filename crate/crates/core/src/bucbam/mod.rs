//! Bottom-up clustering-based merging: over-split each class with a fixed
//! K, reattach clusters smaller than S to their nearest large neighbours,
//! train one classifier per surviving cluster against diverse negatives and
//! merge clusters whose cross-scores clear the thresholds.

mod merge;
mod negatives;
mod prune;
mod similarity;

pub use merge::{merge_clusters, related, MergeMode, MergePlan, UnionFind};
pub use negatives::{sample_diverse_negatives, sample_diverse_with_replacement, DiverseNegatives};
pub use prune::{prune_small_clusters, PruneOutcome, PruneStrategy};
pub use similarity::{build_similarity_matrix, negatives_seed, train_cluster_classifiers, NegativePool, SimilarityMatrix};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{class_views, ClassView, LabeledDataset};
use crate::error::{Error, Result};
use crate::linear::LinearConfig;
use crate::rng::{derive_seed, tags};
use crate::splitters::{effective_k, split_kmeans, split_random_k, ClusterAssignment};

/// Splitter producing the initial over-segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSplit {
    #[default]
    Kmeans,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucbamConfig {
    pub k_initial: usize,
    pub min_cluster_size: usize,
    pub s_high: f64,
    /// Defaults to `s_high / 2`.
    pub s_med: Option<f64>,
    pub merge_mode: MergeMode,
    pub seed: u64,
    pub negatives_per_positive: f64,
    pub negative_pool: NegativePool,
    pub initial_split: InitialSplit,
    pub prune: PruneStrategy,
    pub classifier: LinearConfig,
}

impl Default for BucbamConfig {
    fn default() -> Self {
        Self {
            k_initial: 32,
            min_cluster_size: 15,
            s_high: 0.8,
            s_med: None,
            merge_mode: MergeMode::Ss,
            seed: 0,
            negatives_per_positive: 1.0,
            negative_pool: NegativePool::OtherClasses,
            initial_split: InitialSplit::Kmeans,
            prune: PruneStrategy::Progressive,
            classifier: LinearConfig::default(),
        }
    }
}

impl BucbamConfig {
    pub fn s_med(&self) -> f64 {
        self.s_med.unwrap_or(self.s_high / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let s_med = self.s_med();
        if !(0.0 < s_med && s_med < self.s_high && self.s_high <= 1.0) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 < s_med < s_high <= 1 (got s_med = {s_med}, s_high = {})",
                self.s_high
            )));
        }
        if self.k_initial < 2 {
            return Err(Error::Config("k_initial must be at least 2".into()));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::Config("min_cluster_size must be at least 1".into()));
        }
        if !(self.negatives_per_positive > 0.0 && self.negatives_per_positive.is_finite()) {
            return Err(Error::Config("negatives_per_positive must be positive".into()));
        }
        Ok(())
    }
}

/// Every intermediate product for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassOutcome {
    pub initial: ClusterAssignment,
    pub pruned: PruneOutcome,
    pub matrix: SimilarityMatrix,
    pub plan: MergePlan,
    pub assignment: ClusterAssignment,
}

impl ClassOutcome {
    pub fn class_id(&self) -> usize {
        self.initial.class_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucbamOutput {
    pub classes: Vec<ClassOutcome>,
}

impl BucbamOutput {
    pub fn assignments(&self) -> Vec<ClusterAssignment> {
        self.classes.iter().map(|c| c.assignment.clone()).collect()
    }

    pub fn merged_counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.plan.k_merged).collect()
    }
}

fn initial_split(view: &ClassView, d: &LabeledDataset, cfg: &BucbamConfig) -> Result<ClusterAssignment> {
    let feats = d.features().select_rows(&view.sample_indices);
    let k = effective_k(view, cfg.k_initial)?;
    let seed = derive_seed(cfg.seed, &[tags::BUCBAM, view.class_id as u64]);
    match cfg.initial_split {
        InitialSplit::Kmeans => split_kmeans(view, &feats, k, seed),
        InitialSplit::Random => split_random_k(view, k, seed),
    }
}

/// Runs the whole procedure on one class. `d.features()` is the
/// representation being split.
pub fn bucbam_class(view: &ClassView, d: &LabeledDataset, cfg: &BucbamConfig) -> Result<ClassOutcome> {
    cfg.validate()?;
    let feats = d.features().select_rows(&view.sample_indices);
    let initial = initial_split(view, d, cfg)?;
    let pruned = prune_small_clusters(&initial, &feats, cfg.min_cluster_size, cfg.prune);
    let psi = train_cluster_classifiers(&pruned.assignment, d, &cfg.classifier, cfg.negatives_per_positive, cfg.negative_pool, cfg.seed)?;
    let matrix = build_similarity_matrix(&psi, &pruned.assignment, &feats)?;
    let plan = merge_clusters(&matrix, cfg.merge_mode, cfg.s_high, cfg.s_med());
    let map = plan.cluster_map();
    let member_of = pruned.assignment.member_of.iter().map(|&c| map[c]).collect();
    let assignment = ClusterAssignment::new(view.class_id, view.sample_indices.clone(), member_of)?;
    Ok(ClassOutcome { initial, pruned, matrix, plan, assignment })
}

/// Runs every class in parallel; results are independent of scheduling.
pub fn bucbam_split(d: &LabeledDataset, cfg: &BucbamConfig) -> Result<BucbamOutput> {
    cfg.validate()?;
    let classes = class_views(d)
        .par_iter()
        .map(|v| bucbam_class(v, d, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(BucbamOutput { classes })
}
