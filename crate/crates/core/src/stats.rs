//! Cluster diagnostics: size and intra-cluster variance histograms and
//! per-class projections on the top two principal components, written as
//! plot-ready CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::math::{dot, sq_dist};
use crate::splitters::ClusterAssignment;

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub size_bin: f64,
    /// Width in units of the largest variance (variances are max-normalised).
    pub variance_bin: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { size_bin: 10.0, variance_bin: 0.05 }
    }
}

/// Fixed-width bins `[start + i·width, start + (i+1)·width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins from zero; values at the top edge `cap` fall in the last bin.
    pub fn build(values: &[f64], width: f64, cap: Option<f64>) -> Self {
        let bins = match cap {
            Some(top) => ((top / width).ceil() as usize).max(1),
            None => (values.iter().copied().fold(0.0, f64::max) / width).floor() as usize + 1,
        };
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { start: 0.0, width, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub class_id: usize,
    pub cluster: usize,
    pub size: usize,
    /// Mean squared distance to the cluster centroid.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub clusters: Vec<ClusterRow>,
    pub per_class_k: Vec<usize>,
    pub size_hist: Histogram,
    pub variance_hist: Histogram,
}

pub fn compute_cluster_stats(
    assignments: &[ClusterAssignment],
    features: &FeatureMatrix,
    cfg: &StatsConfig,
) -> Result<ClusterStats> {
    if assignments.is_empty() {
        return Err(Error::invalid("no cluster assignments"));
    }
    if !(cfg.size_bin > 0.0 && cfg.variance_bin > 0.0) {
        return Err(Error::Config("histogram bin widths must be positive".into()));
    }
    let mut clusters = Vec::new();
    for a in assignments {
        if let Some(&bad) = a.sample_indices.iter().find(|&&i| i >= features.n_samples()) {
            return Err(Error::Coverage(format!("sample {bad} has no feature row")));
        }
        for (c, members) in a.members().iter().enumerate() {
            let rows: Vec<&[f64]> = members.iter().map(|&j| features.row(a.sample_indices[j])).collect();
            let mut centroid = vec![0.0; features.dim()];
            for r in &rows {
                for (m, v) in centroid.iter_mut().zip(*r) {
                    *m += v;
                }
            }
            centroid.iter_mut().for_each(|m| *m /= rows.len() as f64);
            let variance = rows.iter().map(|r| sq_dist(r, &centroid)).sum::<f64>() / rows.len() as f64;
            clusters.push(ClusterRow { class_id: a.class_id, cluster: c, size: rows.len(), variance });
        }
    }
    let sizes: Vec<f64> = clusters.iter().map(|c| c.size as f64).collect();
    let max_var = clusters.iter().map(|c| c.variance).fold(0.0, f64::max);
    let normalised: Vec<f64> = clusters
        .iter()
        .map(|c| if max_var > 0.0 { c.variance / max_var } else { 0.0 })
        .collect();
    Ok(ClusterStats {
        per_class_k: assignments.iter().map(|a| a.k).collect(),
        size_hist: Histogram::build(&sizes, cfg.size_bin, None),
        variance_hist: Histogram::build(&normalised, cfg.variance_bin, Some(1.0)),
        clusters,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `N × 2` projection of the mean-centred samples.
    pub projection: FeatureMatrix,
    /// Top two eigenvalues of the unbiased sample covariance, descending.
    pub explained: [f64; 2],
    pub components: [Vec<f64>; 2],
}

/// Unbiased (`N − 1`) sample covariance, row-major `dim × dim`.
pub fn covariance(f: &FeatureMatrix) -> Vec<f64> {
    let (n, d) = (f.n_samples(), f.dim());
    let mut mean = vec![0.0; d];
    for r in f.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut c = vec![0.0; d * d];
    for r in f.rows() {
        let x: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                c[i * d + j] += x[i] * x[j];
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..d {
        for j in i..d {
            let v = c[i * d + j] / denom;
            c[i * d + j] = v;
            c[j * d + i] = v;
        }
    }
    c
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&c[i * d..(i + 1) * d], v)).collect()
}

fn normalise(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration,
/// orthogonal to every vector in `against`.
pub fn power_iteration(c: &[f64], d: usize, against: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let project = |v: &mut Vec<f64>| {
        for u in against {
            let p = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
    };
    let scale: f64 = (0..d).map(|i| c[i * d + i]).sum::<f64>().max(f64::MIN_POSITIVE);
    // Start from the image of a generic vector so the start is in the range of `c`.
    let mut v: Vec<f64> = mat_vec(c, &(0..d).map(|i| 1.0 + 1.0 / (i + 1) as f64).collect::<Vec<_>>());
    project(&mut v);
    if normalise(&mut v) == 0.0 {
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            v = mat_vec(c, &e);
            project(&mut v);
            if normalise(&mut v) > 0.0 {
                break;
            }
        }
    }
    if dot(&v, &v) == 0.0 {
        return (0.0, v);
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = mat_vec(c, &v);
        project(&mut w);
        lambda = dot(&v, &w);
        let residual: f64 = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if normalise(&mut w) == 0.0 {
            return (0.0, v);
        }
        v = w;
        if residual <= POWER_TOL * scale {
            break;
        }
    }
    (lambda.max(0.0), v)
}

fn sign_fix(v: &mut [f64]) {
    let mut big = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[big].abs() {
            big = i;
        }
    }
    if v[big] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_top2(f: &FeatureMatrix) -> Result<Pca> {
    let (n, d) = (f.n_samples(), f.dim());
    if n < 3 || d < 2 {
        return Err(Error::invalid(format!("PCA needs at least 3 samples and 2 dims (got {n} × {d})")));
    }
    let c = covariance(f);
    let (l1, mut v1) = power_iteration(&c, d, &[]);
    if l1 == 0.0 {
        log::warn!("PCA on rank-0 data: projection is zero");
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        let mut e2 = vec![0.0; d];
        e2[1] = 1.0;
        return Ok(Pca { projection: FeatureMatrix::zeros(n, 2), explained: [0.0, 0.0], components: [e1, e2] });
    }
    sign_fix(&mut v1);
    let mut deflated = c.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, mut v2) = power_iteration(&deflated, d, std::slice::from_ref(&v1));
    if l2 == 0.0 || dot(&v2, &v2) == 0.0 {
        // Rank one: any unit vector orthogonal to v1.
        let j = if v1[0].abs() < 0.9 { 0 } else { 1 };
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let p = dot(&e, &v1);
        e.iter_mut().zip(&v1).for_each(|(x, y)| *x -= p * y);
        normalise(&mut e);
        v2 = e;
    }
    sign_fix(&mut v2);
    let mut mean = vec![0.0; d];
    for r in f.rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut values = Vec::with_capacity(2 * n);
    for r in f.rows() {
        let x: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
        values.push(dot(&x, &v1));
        values.push(dot(&x, &v2));
    }
    Ok(Pca {
        projection: FeatureMatrix::from_raw_unchecked(n, 2, values),
        explained: [l1, l2.max(0.0)],
        components: [v1, v2],
    })
}

/// PCA of every class with at least 3 members.
pub fn class_pcas(assignments: &[ClusterAssignment], features: &FeatureMatrix) -> Vec<(usize, Pca, Vec<usize>)> {
    assignments
        .par_iter()
        .filter(|a| a.len() >= 3 && features.dim() >= 2)
        .filter_map(|a| {
            let pca = pca_top2(&features.select_rows(&a.sample_indices)).ok()?;
            Some((a.class_id, pca, a.member_of.clone()))
        })
        .collect()
}

fn hist_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_start,bin_end,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let lo = h.start + i as f64 * h.width;
        let _ = writeln!(s, "{lo},{},{c}", lo + h.width);
    }
    s
}

/// Writes `sizes.csv`, `variance_hist.csv`, `clusters.csv` and one
/// `pca_class_<id>.csv` per class; returns the written paths.
pub fn export_stats(
    stats: &ClusterStats,
    pcas: &[(usize, Pca, Vec<usize>)],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    write("sizes.csv".into(), hist_csv(&stats.size_hist))?;
    write("variance_hist.csv".into(), hist_csv(&stats.variance_hist))?;
    let mut rows = String::from("class_id,cluster,size,variance\n");
    for c in &stats.clusters {
        let _ = writeln!(rows, "{},{},{},{}", c.class_id, c.cluster, c.size, c.variance);
    }
    write("clusters.csv".into(), rows)?;
    for (class_id, pca, members) in pcas {
        let mut s = format!(
            "# covariance denominator N-1; explained variance {} {}\npc1,pc2,cluster_id\n",
            pca.explained[0], pca.explained[1]
        );
        for (r, m) in pca.projection.rows().zip(members) {
            let _ = writeln!(s, "{},{},{m}", r[0], r[1]);
        }
        write(format!("pca_class_{class_id}.csv"), s)?;
    }
    Ok(written)
}
