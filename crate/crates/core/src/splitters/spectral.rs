use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, KMeansParams};
use super::ClusterAssignment;
use crate::data::{ClassView, FeatureMatrix};
use crate::error::{Error, Result};
use crate::math::{dot, median, sq_dist};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub neighbors: usize,
    pub eigen_tol: f64,
    pub max_eigen_iters: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            neighbors: 10,
            eigen_tol: 1e-8,
            max_eigen_iters: 5000,
        }
    }
}

/// Symmetric sparse graph as adjacency lists of `(neighbor, weight)`.
struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Symmetrized k-NN graph with RBF weights, bandwidth = median pairwise distance.
    fn knn_rbf(points: &FeatureMatrix, neighbors: usize) -> Self {
        let n = points.n_samples();
        let mut d2 = vec![0.0; n * n];
        let mut pairwise = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(points.row(i), points.row(j));
                d2[i * n + j] = d;
                d2[j * n + i] = d;
                pairwise.push(d.sqrt());
            }
        }
        let sigma = if pairwise.is_empty() { 1.0 } else { median(&mut pairwise) };
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };
        let m = neighbors.min(n.saturating_sub(1));
        let mut linked = vec![false; n * n];
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]).then(a.cmp(&b)));
            for &j in order.iter().take(m) {
                linked[i * n + j] = true;
                linked[j * n + i] = true;
            }
        }
        let adj = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| linked[i * n + j])
                    .map(|j| (j, (-d2[i * n + j] / (2.0 * sigma * sigma)).exp()))
                    .collect()
            })
            .collect();
        Graph { adj }
    }

    fn components(&self) -> usize {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for j in 0..cols.len() {
        for _ in 0..2 {
            for i in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let proj = dot(&head[i], &tail[0]);
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= proj * h;
                }
            }
        }
        let nrm = dot(&cols[j], &cols[j]).sqrt();
        if nrm > 1e-300 {
            cols[j].iter_mut().for_each(|v| *v /= nrm);
        }
    }
}

/// Bottom-`k` eigenvectors of `L_sym = I - D^-1/2 W D^-1/2`, found as the
/// dominant invariant subspace of the shifted operator `2I - L_sym`, by
/// block power iteration with re-orthonormalisation (each column deflated
/// against the previous ones). Returns the columns and whether the subspace
/// converged.
fn bottom_eigenvectors(g: &Graph, k: usize, seed: u64, params: &SpectralParams) -> (Vec<Vec<f64>>, bool) {
    let n = g.adj.len();
    let inv_sqrt_deg: Vec<f64> = g
        .adj
        .iter()
        .map(|row| {
            let d: f64 = row.iter().map(|(_, w)| w).sum();
            if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }
        })
        .collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mx: f64 = g.adj[i]
                    .iter()
                    .map(|&(j, w)| w * inv_sqrt_deg[i] * inv_sqrt_deg[j] * x[j])
                    .sum();
                x[i] + mx
            })
            .collect()
    };
    let mut rng = stream(seed, &[0x5045_4354]);
    let mut q: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    orthonormalize(&mut q);
    for _ in 0..params.max_eigen_iters {
        let mut z: Vec<Vec<f64>> = q.iter().map(|c| apply(c)).collect();
        orthonormalize(&mut z);
        // sin of the largest principal angle, via the projection residual
        let mut worst: f64 = 0.0;
        for zc in &z {
            let mut resid = zc.clone();
            for qc in &q {
                let p = dot(qc, zc);
                for (r, v) in resid.iter_mut().zip(qc) {
                    *r -= p * v;
                }
            }
            worst = worst.max(dot(&resid, &resid).sqrt());
        }
        q = z;
        if worst < params.eigen_tol {
            return (q, true);
        }
    }
    (q, false)
}

/// Normalized spectral clustering: k-NN RBF graph, bottom-`k` eigenvectors
/// of the symmetric normalized Laplacian, row-normalized, then k-means.
pub fn split_spectral(
    view: &ClassView,
    features_of_view: &FeatureMatrix,
    k: usize,
    seed: u64,
    params: &SpectralParams,
) -> Result<ClusterAssignment> {
    let n = view.len();
    if features_of_view.n_samples() != n {
        return Err(Error::shape("features do not match the class view"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("spectral split needs 1 <= k <= N_i, got k = {k}, N_i = {n}")));
    }
    if k == 1 {
        return Ok(ClusterAssignment::single(view.class_id, view.sample_indices.clone()));
    }
    let g = Graph::knn_rbf(features_of_view, params.neighbors);
    let comps = g.components();
    if comps > k {
        log::warn!("class {}: k-NN graph has {comps} components > k = {k}", view.class_id);
    }
    let (vecs, converged) = bottom_eigenvectors(&g, k, seed, params);
    if !converged {
        log::warn!("class {}: eigen-subspace did not reach tolerance", view.class_id);
    }
    let mut embedding = Vec::with_capacity(n * k);
    for i in 0..n {
        let row: Vec<f64> = vecs.iter().map(|c| c[i]).collect();
        let nrm = dot(&row, &row).sqrt();
        embedding.extend(row.iter().map(|v| if nrm > 0.0 { v / nrm } else { 0.0 }));
    }
    let emb = FeatureMatrix::from_raw_unchecked(n, k, embedding);
    let r = kmeans_fit(&emb, k, seed, &KMeansParams::default())?;
    ClusterAssignment::new(view.class_id, view.sample_indices.clone(), r.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::kmeans::split_kmeans;
    use crate::splitters::test_support::{blobs, pair_ari, view_of};

    fn rings(per: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = stream(seed, &[]);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (ring, radius) in [1.0, 4.0].into_iter().enumerate() {
            for i in 0..per {
                let t = std::f64::consts::TAU * i as f64 / per as f64;
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                values.push(radius * t.cos() + 0.1 * nx);
                values.push(radius * t.sin() + 0.1 * ny);
                labels.push(ring);
            }
        }
        (FeatureMatrix::new(labels.len(), 2, values).unwrap(), labels)
    }

    #[test]
    fn concentric_rings() {
        let (f, truth) = rings(100, 4);
        let view = view_of(200);
        let s = split_spectral(&view, &f, 2, 1, &SpectralParams::default()).unwrap();
        let km = split_kmeans(&view, &f, 2, 1).unwrap();
        let s_ari = pair_ari(&s.member_of, &truth);
        let km_ari = pair_ari(&km.member_of, &truth);
        assert!(s_ari >= 0.9, "spectral ARI {s_ari}");
        assert!(km_ari < 0.5, "k-means ARI {km_ari}");
    }

    #[test]
    fn far_blobs_agree_with_kmeans() {
        let (f, truth) = blobs(&[vec![0.0, 0.0, 0.0], vec![20.0, 0.0, 0.0]], 30, 1.0, 2);
        let view = view_of(60);
        let s = split_spectral(&view, &f, 2, 3, &SpectralParams::default()).unwrap();
        let km = split_kmeans(&view, &f, 2, 3).unwrap();
        assert_eq!(pair_ari(&s.member_of, &km.member_of), 1.0);
        assert_eq!(pair_ari(&s.member_of, &truth), 1.0);
    }

    #[test]
    fn k_one_single_cluster() {
        let (f, _) = blobs(&[vec![0.0, 0.0]], 12, 1.0, 2);
        let s = split_spectral(&view_of(12), &f, 1, 0, &SpectralParams::default()).unwrap();
        assert_eq!(s.sizes, vec![12]);
        assert!(split_spectral(&view_of(12), &f, 13, 0, &SpectralParams::default()).is_err());
    }

    #[test]
    fn eigenvectors_satisfy_the_eigen_equation() {
        let (f, _) = blobs(&[vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 4.0]], 15, 1.0, 8);
        let g = Graph::knn_rbf(&f, 10);
        let (vecs, converged) = bottom_eigenvectors(&g, 3, 1, &SpectralParams::default());
        assert!(converged);
        // The span is invariant: applying the operator stays in it.
        let n = g.adj.len();
        let deg: Vec<f64> = g.adj.iter().map(|r| r.iter().map(|(_, w)| w).sum::<f64>()).collect();
        for v in &vecs {
            let av: Vec<f64> = (0..n)
                .map(|i| v[i] + g.adj[i].iter().map(|&(j, w)| w * v[j] / (deg[i] * deg[j]).sqrt()).sum::<f64>())
                .collect();
            let mut resid = av.clone();
            for q in &vecs {
                let p = dot(q, &av);
                for (r, x) in resid.iter_mut().zip(q) {
                    *r -= p * x;
                }
            }
            assert!(dot(&resid, &resid).sqrt() < 1e-6);
        }
    }
}
