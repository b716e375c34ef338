use rand::seq::SliceRandom;

use super::ClusterAssignment;
use crate::data::ClassView;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Balanced random partition: a seeded shuffle dealt round-robin into `k`
/// clusters, so cluster sizes differ by at most one.
pub fn split_random_k(view: &ClassView, k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 || k > view.len() {
        return Err(Error::invalid(format!(
            "random split needs 1 <= k <= N_i, got k = {k}, N_i = {}",
            view.len()
        )));
    }
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.shuffle(&mut stream(seed, &[]));
    let mut member_of = vec![0; view.len()];
    for (rank, &pos) in order.iter().enumerate() {
        member_of[pos] = rank % k;
    }
    ClusterAssignment::new(view.class_id, view.sample_indices.clone(), member_of)
}
