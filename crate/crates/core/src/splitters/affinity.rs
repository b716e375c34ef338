use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::data::{ClassView, FeatureMatrix};
use crate::error::{Error, Result};
use crate::math::{median, sq_dist};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityParams {
    pub damping: f64,
    pub max_iters: usize,
    /// Iterations with an unchanged exemplar set before declaring convergence.
    pub convergence_iters: usize,
    /// Self-similarity; `None` uses the median off-diagonal similarity.
    pub preference: Option<f64>,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            damping: 0.7,
            max_iters: 500,
            convergence_iters: 15,
            preference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityResult {
    pub assignment: ClusterAssignment,
    /// Positions (within the view) of the exemplars, one per cluster.
    pub exemplars: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

/// Responsibility/availability message passing on negative squared
/// Euclidean similarities. The number of clusters is the number of exemplars.
pub fn split_affinity(view: &ClassView, features_of_view: &FeatureMatrix, params: &AffinityParams) -> Result<AffinityResult> {
    let n = view.len();
    if features_of_view.n_samples() != n {
        return Err(Error::shape("features do not match the class view"));
    }
    if n < 2 {
        return Err(Error::invalid("affinity propagation needs at least 2 samples"));
    }
    if !(0.5..1.0).contains(&params.damping) {
        return Err(Error::invalid(format!("damping {} outside [0.5, 1)", params.damping)));
    }

    let mut s = vec![0.0; n * n];
    let mut off = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let v = -sq_dist(features_of_view.row(i), features_of_view.row(k));
                s[i * n + k] = v;
                off.push(v);
            }
        }
    }
    if off.iter().all(|&v| v == 0.0) {
        return Ok(AffinityResult {
            assignment: ClusterAssignment::single(view.class_id, view.sample_indices.clone()),
            exemplars: vec![0],
            converged: true,
            iterations: 0,
        });
    }
    let pref = params.preference.unwrap_or_else(|| median(&mut off));
    for i in 0..n {
        s[i * n + i] = pref;
    }
    // Tiny deterministic jitter breaks exact ties that make the messages oscillate.
    let mut rng = stream(view.class_id as u64, &[tags::AFFINITY]);
    for v in s.iter_mut() {
        let z: f64 = rng.random::<f64>() - 0.5;
        *v += (f64::EPSILON * v.abs() + f64::MIN_POSITIVE * 100.0) * z;
    }

    let lambda = params.damping;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut last: Vec<bool> = vec![false; n];
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..params.max_iters {
        iterations += 1;
        for i in 0..n {
            let row = i * n;
            let (mut first, mut first_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > first {
                    second = first;
                    first = v;
                    first_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first_k { second } else { first };
                let new = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + (1.0 - lambda) * new;
            }
        }
        for k in 0..n {
            let pos_sum: f64 = (0..n).filter(|&i| i != k).map(|i| r[i * n + k].max(0.0)).sum();
            for i in 0..n {
                let new = if i == k {
                    pos_sum
                } else {
                    (r[k * n + k] + pos_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = lambda * a[i * n + k] + (1.0 - lambda) * new;
            }
        }
        let exemplar: Vec<bool> = (0..n).map(|k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        if exemplar == last && exemplar.iter().any(|&e| e) {
            stable += 1;
        } else {
            stable = 0;
        }
        last = exemplar;
        if stable >= params.convergence_iters {
            converged = true;
            break;
        }
    }

    let exemplars: Vec<usize> = (0..n).filter(|&k| last[k]).collect();
    if exemplars.is_empty() {
        return Ok(AffinityResult {
            assignment: ClusterAssignment::single(view.class_id, view.sample_indices.clone()),
            exemplars: vec![],
            converged: false,
            iterations,
        });
    }
    let member_of: Vec<usize> = (0..n)
        .map(|i| {
            if let Ok(pos) = exemplars.binary_search(&i) {
                return pos;
            }
            let mut best = (0, f64::NEG_INFINITY);
            for (c, &e) in exemplars.iter().enumerate() {
                if s[i * n + e] > best.1 {
                    best = (c, s[i * n + e]);
                }
            }
            best.0
        })
        .collect();
    Ok(AffinityResult {
        assignment: ClusterAssignment::new(view.class_id, view.sample_indices.clone(), member_of)?,
        exemplars,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::test_support::{blobs, pair_ari, view_of};

    #[test]
    fn three_blobs() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let (f, truth) = blobs(&centers, 15, 0.5, 3);
        let r = split_affinity(&view_of(45), &f, &AffinityParams::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.assignment.k, 3);
        assert_eq!(pair_ari(&r.assignment.member_of, &truth), 1.0);
        for &e in &r.exemplars {
            let c = &centers[truth[e]];
            assert!(sq_dist(f.row(e), c).sqrt() < 1.5);
        }
    }

    #[test]
    fn identical_points_one_cluster() {
        let f = FeatureMatrix::new(5, 2, vec![3.0; 10]).unwrap();
        let r = split_affinity(&view_of(5), &f, &AffinityParams::default()).unwrap();
        assert_eq!(r.assignment.k, 1);
    }

    #[test]
    fn lower_preference_fewer_clusters() {
        let centers: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 2.5, (i % 3) as f64 * 2.0]).collect();
        let (f, _) = blobs(&centers, 8, 0.8, 6);
        let median_run = split_affinity(&view_of(48), &f, &AffinityParams::default()).unwrap();
        let min_sim = {
            let mut m = 0.0f64;
            for i in 0..48 {
                for j in 0..48 {
                    m = m.min(-sq_dist(f.row(i), f.row(j)));
                }
            }
            m
        };
        let low = AffinityParams {
            preference: Some(min_sim * 10.0),
            ..AffinityParams::default()
        };
        let low_run = split_affinity(&view_of(48), &f, &low).unwrap();
        assert!(
            low_run.assignment.k < median_run.assignment.k,
            "{} vs {}",
            low_run.assignment.k,
            median_run.assignment.k
        );
    }
}
