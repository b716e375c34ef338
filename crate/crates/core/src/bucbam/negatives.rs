//! Diverse negatives: samples drawn class-equiprobably across the dataset.

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiverseNegatives {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Draws `count` distinct samples outside `exclude`: a class uniformly at
/// random, then a sample uniformly within it. Classes whose remaining
/// samples are all excluded or taken are skipped, which is what rejecting
/// and redrawing would converge to.
pub fn sample_diverse_negatives(
    d: &LabeledDataset,
    count: usize,
    exclude: &[usize],
    seed: u64,
) -> Result<DiverseNegatives> {
    let mut excluded = vec![false; d.n_samples()];
    for &i in exclude {
        if i >= d.n_samples() {
            return Err(Error::invalid(format!("excluded index {i} out of range")));
        }
        excluded[i] = true;
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); d.class_count()];
    for (i, &l) in d.labels().iter().enumerate() {
        if !excluded[i] {
            pools[l].push(i);
        }
    }
    let available: usize = pools.iter().map(Vec::len).sum();
    if count > available {
        return Err(Error::Infeasible(format!(
            "requested {count} negatives but only {available} samples are outside the cluster"
        )));
    }
    let mut rng = stream(seed, &[]);
    let mut live: Vec<usize> = (0..pools.len()).filter(|&c| !pools[c].is_empty()).collect();
    let mut indices = Vec::with_capacity(count);
    while indices.len() < count {
        let slot = rng.random_range(0..live.len());
        let pool = &mut pools[live[slot]];
        let pick = rng.random_range(0..pool.len());
        indices.push(pool.swap_remove(pick));
        if pool.is_empty() {
            live.remove(slot);
        }
    }
    Ok(DiverseNegatives { indices, seed })
}

/// Same two-stage draw, with replacement and no exclusions.
pub fn sample_diverse_with_replacement(d: &LabeledDataset, count: usize, seed: u64) -> Vec<usize> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); d.class_count()];
    for (i, &l) in d.labels().iter().enumerate() {
        pools[l].push(i);
    }
    let mut rng = stream(seed, &[]);
    (0..count)
        .map(|_| {
            let pool = &pools[rng.random_range(0..pools.len())];
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}
