//! Per-class splitting strategies.
//!
//! Every splitter turns the samples of one specific class into a
//! [`ClusterAssignment`]. [`split_dataset`] runs a fixed-K or adaptive
//! splitter over every class of a dataset in parallel; each class draws from
//! its own seed stream so results do not depend on scheduling.

mod affinity;
mod kmeans;
mod meanshift;
mod random;
mod spectral;

pub use affinity::{split_affinity, AffinityParams, AffinityResult};
pub use kmeans::{kmeans_fit, split_kmeans, KMeansParams, KMeansResult};
pub use meanshift::{split_meanshift, MeanShiftResult};
pub use random::split_random_k;
pub use spectral::{split_spectral, SpectralParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{class_views, ClassView, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tags};

/// The finer clusters of one specific class.
///
/// `member_of[j]` is the cluster of global sample `sample_indices[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub class_id: usize,
    pub sample_indices: Vec<usize>,
    pub member_of: Vec<usize>,
    pub k: usize,
    pub sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Validates that cluster ids are `0..k` with every cluster non-empty.
    pub fn new(class_id: usize, sample_indices: Vec<usize>, member_of: Vec<usize>) -> Result<Self> {
        if sample_indices.len() != member_of.len() {
            return Err(Error::shape(format!(
                "{} samples but {} cluster ids",
                sample_indices.len(),
                member_of.len()
            )));
        }
        let k = member_of.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &c in &member_of {
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("class {class_id}: cluster {empty} is empty")));
        }
        Ok(Self {
            class_id,
            sample_indices,
            member_of,
            k,
            sizes,
        })
    }

    /// Renumbers arbitrary cluster ids to `0..k`, preserving their order.
    pub fn compacted(class_id: usize, sample_indices: Vec<usize>, raw: &[usize]) -> Self {
        let mut distinct: Vec<usize> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let member_of = raw
            .iter()
            .map(|r| distinct.binary_search(r).expect("present"))
            .collect();
        Self::new(class_id, sample_indices, member_of).expect("compacted ids are dense")
    }

    /// Everything in one cluster.
    pub fn single(class_id: usize, sample_indices: Vec<usize>) -> Self {
        let n = sample_indices.len();
        Self::new(class_id, sample_indices, vec![0; n]).expect("non-empty view")
    }

    pub fn len(&self) -> usize {
        self.member_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_of.is_empty()
    }

    /// Positions (into `sample_indices`) of the members of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (j, &c) in self.member_of.iter().enumerate() {
            out[c].push(j);
        }
        out
    }
}

/// A baseline splitting method with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SplitMethod {
    Random { k: usize },
    Kmeans { k: usize },
    Spectral { k: usize },
    Affinity(AffinityParams),
    Meanshift { bandwidth: f64 },
}

impl SplitMethod {
    pub fn name(&self) -> String {
        match self {
            SplitMethod::Random { k } => format!("random-k{k}"),
            SplitMethod::Kmeans { k } => format!("kmeans-k{k}"),
            SplitMethod::Spectral { k } => format!("spectral-k{k}"),
            SplitMethod::Affinity(_) => "affinity".into(),
            SplitMethod::Meanshift { bandwidth } => format!("meanshift-b{bandwidth}"),
        }
    }
}

/// Seed of the stream used to split `class_id`.
pub fn class_seed(seed: u64, class_id: usize) -> u64 {
    derive_seed(seed, &[tags::SPLIT, class_id as u64])
}

/// Requested K clamped to the class size, with a warning when it shrinks.
pub(crate) fn effective_k(view: &ClassView, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if view.len() < k {
        log::warn!(
            "class {} has {} samples < k = {k}; using singleton clusters",
            view.class_id,
            view.len()
        );
        Ok(view.len())
    } else {
        Ok(k)
    }
}

/// Splits one class with `method`.
pub fn split_class(
    view: &ClassView,
    features_of_view: &FeatureMatrix,
    method: &SplitMethod,
    seed: u64,
) -> Result<ClusterAssignment> {
    let seed = class_seed(seed, view.class_id);
    match method {
        SplitMethod::Random { k } => split_random_k(view, effective_k(view, *k)?, seed),
        SplitMethod::Kmeans { k } => {
            split_kmeans(view, features_of_view, effective_k(view, *k)?, seed)
        }
        SplitMethod::Spectral { k } => {
            split_spectral(view, features_of_view, effective_k(view, *k)?, seed, &SpectralParams::default())
        }
        SplitMethod::Affinity(p) => {
            if view.len() < 2 {
                return Ok(ClusterAssignment::single(view.class_id, view.sample_indices.clone()));
            }
            let r = split_affinity(view, features_of_view, p)?;
            if !r.converged {
                log::warn!("class {}: affinity propagation did not converge", view.class_id);
            }
            Ok(r.assignment)
        }
        SplitMethod::Meanshift { bandwidth } => {
            Ok(split_meanshift(view, features_of_view, *bandwidth)?.assignment)
        }
    }
}

/// Splits every class of `d` in parallel.
pub fn split_dataset(d: &LabeledDataset, method: &SplitMethod, seed: u64) -> Result<Vec<ClusterAssignment>> {
    class_views(d)
        .par_iter()
        .map(|view| {
            let feats = d.features().select_rows(&view.sample_indices);
            split_class(view, &feats, method, seed)
        })
        .collect()
}
