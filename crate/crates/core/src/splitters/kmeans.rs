use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::data::{ClassView, FeatureMatrix};
use crate::error::{Error, Result};
use crate::math::sq_dist;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: FeatureMatrix,
    /// Nearest-centroid label of every point, lowest index on ties.
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every centroid update. Non-increasing.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    /// How many times an empty cluster was reseeded.
    pub repairs: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.n_samples();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = points.rows().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Rounding can run past the end; settle on the last positive weight.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, r) in points.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &FeatureMatrix, centroids: &[Vec<f64>]) -> Vec<usize> {
    points.rows().map(|r| nearest(r, centroids).0).collect()
}

/// Reseeds each empty cluster at the point farthest from its current
/// centroid (taken from a cluster with more than one member).
fn repair_empty(points: &FeatureMatrix, labels: &mut [usize], centroids: &mut [Vec<f64>]) -> usize {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut repairs = 0;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, r) in points.rows().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(r, &centroids[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let p = far.expect("n >= k leaves a cluster with two or more members");
        sizes[labels[p]] -= 1;
        labels[p] = empty;
        sizes[empty] = 1;
        centroids[empty] = points.row(p).to_vec();
        repairs += 1;
    }
    repairs
}

fn means(points: &FeatureMatrix, labels: &[usize], k: usize, previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points.dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in points.rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| {
            if n == 0 {
                previous[c].clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

fn cost(points: &FeatureMatrix, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .rows()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, &centroids[l]))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans_fit(points: &FeatureMatrix, k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansResult> {
    let n = points.n_samples();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = stream(seed, &[]);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut labels = assign(points, &centroids);
    let mut history: Vec<f64> = Vec::new();
    let mut repairs = 0;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let mut next_labels = labels.clone();
        let mut seeded = centroids.clone();
        repairs += repair_empty(points, &mut next_labels, &mut seeded);
        let updated = means(points, &next_labels, k, &seeded);
        let inertia = cost(points, &next_labels, &updated);
        if history.last().is_some_and(|&prev| inertia > prev) {
            // Only reachable through rounding; keep the previous state.
            break;
        }
        history.push(inertia);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max)
            .sqrt();
        centroids = updated;
        labels = assign(points, &centroids);
        if shift < params.tol {
            break;
        }
    }

    // Final labels are nearest-centroid; reseed anything left empty.
    repairs += repair_empty(points, &mut labels, &mut centroids);
    let inertia = cost(points, &labels, &centroids);
    let dim = points.dim();
    Ok(KMeansResult {
        centroids: FeatureMatrix::from_raw_unchecked(k, dim, centroids.concat()),
        labels,
        inertia,
        inertia_history: history,
        iterations,
        repairs,
    })
}

/// k-means on the features of one class; clusters keep their centroid order.
pub fn split_kmeans(view: &ClassView, features_of_view: &FeatureMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    if features_of_view.n_samples() != view.len() {
        return Err(Error::shape("features do not match the class view"));
    }
    let r = kmeans_fit(features_of_view, k, seed, &KMeansParams::default())?;
    ClusterAssignment::new(view.class_id, view.sample_indices.clone(), r.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::test_support::{blobs, pair_ari, view_of};

    fn line(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    /// Minimum inertia over every 2-partition of a 1-D point set.
    fn brute_force_two_means(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for mask in 1..(1u32 << n) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = {
                let mut a = vec![];
                let mut b = vec![];
                for (i, &x) in xs.iter().enumerate() {
                    if mask & (1 << i) != 0 { a.push(x) } else { b.push(x) }
                }
                (a, b)
            };
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cost: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
                + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            if cost < best.0 {
                best = (cost, ma.min(mb), ma.max(mb));
            }
        }
        best
    }

    #[test]
    fn two_clusters_on_a_line_matches_brute_force() {
        let xs = [-0.1, 0.0, 0.1, 9.9, 10.0, 10.1];
        let (best, lo, hi) = brute_force_two_means(&xs);
        assert!((best - 0.04).abs() < 1e-12);
        for seed in 0..20 {
            let r = kmeans_fit(&line(&xs), 2, seed, &KMeansParams::default()).unwrap();
            let mut c = r.centroids.values().to_vec();
            c.sort_by(f64::total_cmp);
            assert!((c[0] - lo).abs() < 1e-6 && (c[1] - hi).abs() < 1e-6, "seed {seed}: {c:?}");
            assert!((r.inertia - best).abs() < 1e-9);
        }
    }

    #[test]
    fn k_equals_n_and_k_one() {
        let xs = [3.0, -1.0, 4.0, 1.5, 9.0];
        let r = kmeans_fit(&line(&xs), 5, 3, &KMeansParams::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3, 4]);

        let r = kmeans_fit(&line(&xs), 1, 3, &KMeansParams::default()).unwrap();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((r.centroids.values()[0] - mean).abs() < 1e-12);
        assert!((r.inertia - var * 5.0).abs() < 1e-9);
        assert!(kmeans_fit(&line(&xs), 6, 0, &KMeansParams::default()).is_err());
    }

    #[test]
    fn planted_blobs_recovered() {
        let centers: Vec<Vec<f64>> = vec![vec![0.0; 8], vec![6.0; 8]];
        let (f, truth) = blobs(&centers, 25, 1.0, 5);
        let a = split_kmeans(&view_of(50), &f, 2, 1).unwrap();
        assert_eq!(pair_ari(&a.member_of, &truth), 1.0);
        assert_eq!(split_kmeans(&view_of(50), &f, 1, 1).unwrap().sizes, vec![50]);
    }

    #[test]
    fn duplicates_trigger_repair() {
        let f = FeatureMatrix::new(6, 2, vec![1.0; 12]).unwrap();
        let r = kmeans_fit(&f, 2, 0, &KMeansParams::default()).unwrap();
        assert!(r.repairs > 0);
        let mut sizes = [0; 2];
        for &l in &r.labels {
            sizes[l] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, [1, 5]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn inertia_never_increases() {
        let centers: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 1.5, 0.0, (i % 2) as f64]).collect();
        let (f, _) = blobs(&centers, 30, 1.0, 9);
        for seed in 0..30 {
            let r = kmeans_fit(&f, 7, seed, &KMeansParams::default()).unwrap();
            assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0]));
            assert!(r.inertia <= *r.inertia_history.last().unwrap());
            // nearest-centroid labelling
            let cs: Vec<Vec<f64>> = r.centroids.rows().map(|c| c.to_vec()).collect();
            for (p, &l) in f.rows().zip(&r.labels) {
                assert_eq!(nearest(p, &cs).0, l);
            }
        }
    }
}
