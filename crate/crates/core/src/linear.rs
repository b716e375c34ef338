//! Linear models: binary logistic/hinge classifiers trained by deterministic
//! full-batch descent, one-vs-all probes built from them, and the 1-NN lookup.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Tensor};
use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid, softplus, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Logistic,
    Hinge,
}

impl LossKind {
    fn code(self) -> f64 {
        match self {
            LossKind::Logistic => 0.0,
            LossKind::Hinge => 1.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(LossKind::Logistic),
            1 => Ok(LossKind::Hinge),
            _ => Err(Error::Format(format!("unknown loss code {c}"))),
        }
    }
}

/// Optimizer settings shared by binary and one-vs-all training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub loss: LossKind,
    pub l2: f64,
    pub iters: usize,
    /// Initial trial step of the line search.
    pub lr: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            l2: 1e-3,
            iters: 500,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryLinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub loss: LossKind,
    pub l2: f64,
}

impl BinaryLinearModel {
    pub fn zeros(dim: usize, loss: LossKind, l2: f64) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
            loss,
            l2,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// `sigmoid(w·x + b)` for logistic models, the raw margin for hinge.
    pub fn score_one(&self, x: &[f64]) -> f64 {
        match self.loss {
            LossKind::Logistic => sigmoid(self.margin(x)),
            LossKind::Hinge => self.margin(x),
        }
    }

    fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::row_vector(self.w.clone()),
            Tensor::row_vector(vec![self.b, self.loss.code(), self.l2]),
        ]
    }

    fn from_tensors(t: &[Tensor]) -> Result<Self> {
        match t {
            [w, meta] if w.rows == 1 && meta.values.len() == 3 => Ok(Self {
                w: w.values.clone(),
                b: meta.values[0],
                loss: LossKind::from_code(meta.values[1])?,
                l2: meta.values[2],
            }),
            _ => Err(Error::Format("not a binary linear model".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(&self.to_tensors(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(&container::load(path)?)
    }
}

/// Scores every row of `f`.
pub fn score(m: &BinaryLinearModel, f: &FeatureMatrix) -> Result<Vec<f64>> {
    if f.dim() != m.dim() {
        return Err(Error::shape(format!("model dim {} vs features dim {}", m.dim(), f.dim())));
    }
    Ok(f.rows().map(|r| m.score_one(r)).collect())
}

/// Regularized empirical loss; `targets[i]` is `+1.0` or `-1.0`.
pub fn objective(w: &[f64], b: f64, x: &FeatureMatrix, targets: &[f64], loss: LossKind, l2: f64) -> f64 {
    let n = targets.len() as f64;
    let data: f64 = x
        .rows()
        .zip(targets)
        .map(|(r, &y)| {
            let z = dot(w, r) + b;
            match loss {
                LossKind::Logistic => softplus(-y * z),
                LossKind::Hinge => (1.0 - y * z).max(0.0),
            }
        })
        .sum();
    data / n + 0.5 * l2 * dot(w, w)
}

/// (Sub)gradient of [`objective`] with respect to `(w, b)`.
pub fn gradient(w: &[f64], b: f64, x: &FeatureMatrix, targets: &[f64], loss: LossKind, l2: f64) -> (Vec<f64>, f64) {
    let n = targets.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (r, &y) in x.rows().zip(targets) {
        let z = dot(w, r) + b;
        let coef = match loss {
            LossKind::Logistic => -y * sigmoid(-y * z),
            LossKind::Hinge => {
                if 1.0 - y * z > 0.0 {
                    -y
                } else {
                    0.0
                }
            }
        };
        if coef != 0.0 {
            for (g, v) in gw.iter_mut().zip(r) {
                *g += coef * v;
            }
            gb += coef;
        }
    }
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (gw, gb / n)
}

/// Result of fitting plus the objective trace endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
}

/// Full-batch descent from zero weights. Each iteration tries the previous
/// accepted step doubled and halves it until the objective decreases by the
/// Armijo margin, so the objective is monotone for both losses.
///
/// The bias is unpenalised, so descent runs on mean-centred inputs and the
/// bias is shifted back afterwards; the objective is the same, only better
/// conditioned.
pub fn fit(x: &FeatureMatrix, targets: &[f64], cfg: &LinearConfig) -> Result<(BinaryLinearModel, FitReport)> {
    if x.n_samples() == 0 || x.n_samples() != targets.len() {
        return Err(Error::shape("need one target per sample and at least one sample"));
    }
    if !(cfg.lr > 0.0) || cfg.l2 < 0.0 {
        return Err(Error::invalid("lr must be positive and l2 non-negative"));
    }
    let n = x.n_samples() as f64;
    let mut mean = vec![0.0; x.dim()];
    for r in x.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let centred: Vec<f64> = x.rows().flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m)).collect();
    let x = &FeatureMatrix::from_raw_unchecked(x.n_samples(), x.dim(), centred);
    let mut w = vec![0.0; x.dim()];
    let mut b = 0.0;
    let mut obj = objective(&w, b, x, targets, cfg.loss, cfg.l2);
    let initial = obj;
    let mut step = cfg.lr;
    let mut iterations = 0;
    for it in 0..cfg.iters {
        let (gw, gb) = gradient(&w, b, x, targets, cfg.loss, cfg.l2);
        let g2 = dot(&gw, &gw) + gb * gb;
        if !g2.is_finite() {
            return Err(Error::Diverged { epoch: it, loss: obj });
        }
        if g2 < 1e-24 {
            break;
        }
        let mut trial = step * 2.0;
        let accepted = loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - trial * g).collect();
            let nb = b - trial * gb;
            let nobj = objective(&nw, nb, x, targets, cfg.loss, cfg.l2);
            if nobj <= obj - 1e-4 * trial * g2 {
                break Some((nw, nb, nobj));
            }
            trial *= 0.5;
            if trial < 1e-14 {
                break None;
            }
        };
        iterations = it + 1;
        match accepted {
            Some((nw, nb, nobj)) => {
                w = nw;
                b = nb;
                obj = nobj;
                step = trial;
            }
            None => break,
        }
    }
    if !obj.is_finite() {
        return Err(Error::Diverged { epoch: iterations, loss: obj });
    }
    let b = b - dot(&w, &mean);
    Ok((
        BinaryLinearModel {
            w,
            b,
            loss: cfg.loss,
            l2: cfg.l2,
        },
        FitReport {
            initial_objective: initial,
            final_objective: obj,
            iterations,
        },
    ))
}

fn stack(positives: &FeatureMatrix, negatives: &FeatureMatrix) -> (FeatureMatrix, Vec<f64>) {
    let mut values = positives.values().to_vec();
    values.extend_from_slice(negatives.values());
    let n = positives.n_samples() + negatives.n_samples();
    let mut targets = vec![1.0; positives.n_samples()];
    targets.extend(std::iter::repeat_n(-1.0, negatives.n_samples()));
    (FeatureMatrix::from_raw_unchecked(n, positives.dim(), values), targets)
}

/// Trains a binary model separating `positives` from `negatives`.
pub fn train_binary(positives: &FeatureMatrix, negatives: &FeatureMatrix, cfg: &LinearConfig) -> Result<BinaryLinearModel> {
    train_binary_report(positives, negatives, cfg).map(|(m, _)| m)
}

pub fn train_binary_report(
    positives: &FeatureMatrix,
    negatives: &FeatureMatrix,
    cfg: &LinearConfig,
) -> Result<(BinaryLinearModel, FitReport)> {
    if positives.n_samples() == 0 || negatives.n_samples() == 0 {
        return Err(Error::invalid("binary training needs positives and negatives"));
    }
    if positives.dim() != negatives.dim() {
        return Err(Error::shape("positives and negatives differ in dimension"));
    }
    let (x, t) = stack(positives, negatives);
    fit(&x, &t, cfg)
}

/// One binary model per class, all over the same input space.
#[derive(Debug, Clone, PartialEq)]
pub struct OvaModel {
    pub models: Vec<BinaryLinearModel>,
}

impl OvaModel {
    pub fn class_count(&self) -> usize {
        self.models.len()
    }

    /// `scores[c][i]`: score of class `c` on sample `i`.
    pub fn scores(&self, f: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.models.iter().map(|m| score(m, f)).collect()
    }

    /// Argmax over classes; the lowest class wins ties.
    pub fn predict(&self, f: &FeatureMatrix) -> Result<Vec<usize>> {
        let scores = self.scores(f)?;
        Ok((0..f.n_samples())
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for (c, s) in scores.iter().enumerate() {
                    if s[i] > best.1 {
                        best = (c, s[i]);
                    }
                }
                best.0
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: Vec<Tensor> = self.models.iter().flat_map(|m| m.to_tensors()).collect();
        container::save(&tensors, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t = container::load(path)?;
        if t.len() % 2 != 0 {
            return Err(Error::Format("odd tensor count for a one-vs-all model".into()));
        }
        let models = t.chunks(2).map(BinaryLinearModel::from_tensors).collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }
}

/// Trains binary models from per-class ±1 targets, in parallel.
pub fn train_ova_targets(x: &FeatureMatrix, targets: &[Vec<f64>], cfg: &LinearConfig) -> Result<OvaModel> {
    let models = targets
        .par_iter()
        .map(|t| fit(x, t, cfg).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    Ok(OvaModel { models })
}

/// One-vs-all: class `c` against every other sample.
pub fn train_ova(d: &LabeledDataset, cfg: &LinearConfig) -> Result<OvaModel> {
    if d.class_count() < 2 {
        return Err(Error::invalid("one-vs-all needs at least two classes"));
    }
    let targets: Vec<Vec<f64>> = (0..d.class_count())
        .map(|c| d.labels().iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect())
        .collect();
    train_ova_targets(d.features(), &targets, cfg)
}

/// Index of the pool row closest to `query`; the lowest index wins ties.
pub fn nearest_neighbor(query: &[f64], pool: &FeatureMatrix) -> Result<usize> {
    if pool.n_samples() == 0 {
        return Err(Error::invalid("nearest neighbour in an empty pool"));
    }
    if query.len() != pool.dim() {
        return Err(Error::shape("query and pool differ in dimension"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, r) in pool.rows().enumerate() {
        let d = sq_dist(query, r);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn col(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn logistic() -> LinearConfig {
        LinearConfig::default()
    }

    #[test]
    fn one_dimensional_toy_matches_grid_search() {
        let pos = col(&[1.0, 2.0]);
        let neg = col(&[-1.0, -2.0]);
        let (m, rep) = train_binary_report(&pos, &neg, &logistic()).unwrap();
        assert!(m.w[0] > 0.0);
        assert!(m.b.abs() < 1e-6);
        assert!(m.score_one(&[2.0]) > 0.9);
        assert!(rep.final_objective <= rep.initial_objective);

        let (x, t) = stack(&pos, &neg);
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let w = i as f64 * 0.005;
            for j in -20..=20 {
                let b = j as f64 * 0.005;
                best = best.min(objective(&[w], b, &x, &t, LossKind::Logistic, 1e-3));
            }
        }
        assert!((rep.final_objective - best).abs() < 1e-3, "{} vs {best}", rep.final_objective);
    }

    #[test]
    fn heavy_l2_shrinks() {
        let cfg = LinearConfig { l2: 1e6, ..logistic() };
        let m = train_binary(&col(&[1.0, 2.0]), &col(&[-1.0, -2.0]), &cfg).unwrap();
        assert!(m.w[0].abs() < 1e-2);
    }

    #[test]
    fn identical_sets_score_half() {
        let x = FeatureMatrix::from_rows(&[[1.0, 0.5], [-0.3, 2.0], [0.0, 0.0]]).unwrap();
        let m = train_binary(&x, &x, &logistic()).unwrap();
        for s in score(&m, &x).unwrap() {
            assert!((s - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn score_conventions() {
        let m = BinaryLinearModel::zeros(2, LossKind::Logistic, 0.0);
        let f = FeatureMatrix::from_rows(&[[1.0, 2.0], [-5.0, 3.0]]).unwrap();
        assert_eq!(score(&m, &f).unwrap(), vec![0.5, 0.5]);
        assert!(score(&m, &col(&[1.0])).is_err());

        let m = BinaryLinearModel { w: vec![0.7, -1.3], b: 0.2, loss: LossKind::Logistic, l2: 0.0 };
        let mut rng = stream(3, &[]);
        let rows: Vec<[f64; 2]> = (0..50).map(|_| [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0]).collect();
        let f = FeatureMatrix::from_rows(&rows).unwrap();
        let s = score(&m, &f).unwrap();
        let mut pairs: Vec<(f64, f64)> = f.rows().map(|r| m.margin(r)).zip(s).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(pairs.iter().all(|p| p.1 > 0.0 && p.1 < 1.0));
    }

    #[test]
    fn save_load_identical_scores() {
        let m = train_binary(&col(&[1.0, 2.5]), &col(&[-1.0, 0.3]), &logistic()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        let back = BinaryLinearModel::load(&p).unwrap();
        let f = col(&[-3.0, 0.0, 0.7, 4.0]);
        assert_eq!(score(&m, &f).unwrap(), score(&back, &f).unwrap());
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = stream(17, &[]);
        for _ in 0..20 {
            let n = 6;
            let d = 3;
            let vals: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let x = FeatureMatrix::new(n, d, vals).unwrap();
            let t: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let b = rng.random::<f64>() - 0.5;
            let (gw, gb) = gradient(&w, b, &x, &t, LossKind::Logistic, 0.1);
            let eps = 1e-5;
            for j in 0..d {
                let mut wp = w.clone();
                wp[j] += eps;
                let mut wm = w.clone();
                wm[j] -= eps;
                let num = (objective(&wp, b, &x, &t, LossKind::Logistic, 0.1)
                    - objective(&wm, b, &x, &t, LossKind::Logistic, 0.1))
                    / (2.0 * eps);
                assert!((num - gw[j]).abs() / (num.abs() + gw[j].abs()).max(1e-8) < 1e-6);
            }
            let num = (objective(&w, b + eps, &x, &t, LossKind::Logistic, 0.1)
                - objective(&w, b - eps, &x, &t, LossKind::Logistic, 0.1))
                / (2.0 * eps);
            assert!((num - gb).abs() / (num.abs() + gb.abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn hinge_subgradient_sign_away_from_kink() {
        let x = FeatureMatrix::from_rows(&[[2.0, 0.0], [-1.0, 0.5]]).unwrap();
        let t = [1.0, -1.0];
        let w = [0.1, 0.1];
        let (gw, _) = gradient(&w, 0.0, &x, &t, LossKind::Hinge, 0.0);
        let eps = 1e-5;
        for j in 0..2 {
            let mut wp = w;
            wp[j] += eps;
            let mut wm = w;
            wm[j] -= eps;
            let num = (objective(&wp, 0.0, &x, &t, LossKind::Hinge, 0.0)
                - objective(&wm, 0.0, &x, &t, LossKind::Hinge, 0.0))
                / (2.0 * eps);
            assert_eq!(num.signum(), gw[j].signum());
            assert!((num - gw[j]).abs() < 1e-8);
        }
    }

    fn three_blobs() -> LabeledDataset {
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let mut rng = stream(5, &[]);
        let mut rows = vec![];
        let mut labels = vec![];
        for (c, m) in centers.iter().enumerate() {
            for _ in 0..20 {
                rows.push([m[0] + rng.random::<f64>() - 0.5, m[1] + rng.random::<f64>() - 0.5]);
                labels.push(c);
            }
        }
        LabeledDataset::from_labels(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn ova_separable_blobs() {
        let d = three_blobs();
        for loss in [LossKind::Logistic, LossKind::Hinge] {
            let m = train_ova(&d, &LinearConfig { loss, ..logistic() }).unwrap();
            assert_eq!(m.predict(d.features()).unwrap(), d.labels(), "{loss:?}");
        }
    }

    #[test]
    fn ova_two_class_agrees_with_binary_threshold() {
        let d = three_blobs();
        let keep: Vec<usize> = (0..d.n_samples()).filter(|&i| d.labels()[i] < 2).collect();
        // overlapping 2-class problem
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| {
            let r = d.features().row(i);
            vec![r[0] * 0.2, r[1]]
        }).collect();
        let labels: Vec<usize> = keep.iter().map(|&i| d.labels()[i]).collect();
        let two = LabeledDataset::from_labels(FeatureMatrix::from_rows(&rows).unwrap(), labels.clone()).unwrap();
        let ova = train_ova(&two, &logistic()).unwrap();
        let pos = two.features().select_rows(&(0..labels.len()).filter(|&i| labels[i] == 1).collect::<Vec<_>>());
        let neg = two.features().select_rows(&(0..labels.len()).filter(|&i| labels[i] == 0).collect::<Vec<_>>());
        let bin = train_binary(&pos, &neg, &logistic()).unwrap();
        let pred = ova.predict(two.features()).unwrap();
        for (i, r) in two.features().rows().enumerate() {
            assert_eq!(pred[i] == 1, bin.score_one(r) > 0.5, "sample {i}");
        }
    }

    #[test]
    fn ova_permutation_equivariant() {
        let d = three_blobs();
        let perm = [2, 0, 1];
        let relabeled: Vec<usize> = d.labels().iter().map(|&l| perm[l]).collect();
        let d2 = LabeledDataset::from_labels(d.features().clone(), relabeled).unwrap();
        let a = train_ova(&d, &logistic()).unwrap();
        let b = train_ova(&d2, &logistic()).unwrap();
        for c in 0..3 {
            assert_eq!(a.models[c], b.models[perm[c]]);
        }
        let pa: Vec<usize> = a.predict(d.features()).unwrap().iter().map(|&l| perm[l]).collect();
        assert_eq!(pa, b.predict(d.features()).unwrap());
    }

    #[test]
    fn nearest_neighbor_rules() {
        let pool = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 2.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(nearest_neighbor(&[2.0, 2.0], &pool).unwrap(), 3);
        assert_eq!(nearest_neighbor(&[0.0, 0.0], &pool).unwrap(), 0);
        // equidistant to rows 1 and 4
        let pool = FeatureMatrix::from_rows(&[[9.0, 9.0], [1.0, 0.0], [7.0, 7.0], [8.0, 8.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(nearest_neighbor(&[0.0, 0.0], &pool).unwrap(), 1);
        assert!(nearest_neighbor(&[0.0], &FeatureMatrix::zeros(0, 1)).is_err());
    }

    #[test]
    fn nearest_neighbor_equals_scan() {
        let mut rng = stream(99, &[]);
        for _ in 0..100 {
            let n = rng.random_range(1..30);
            let d = rng.random_range(1..5);
            let pool = FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(-3..3) as f64).collect()).unwrap();
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-3..3) as f64).collect();
            let scan = (0..n)
                .min_by(|&a, &b| sq_dist(&q, pool.row(a)).total_cmp(&sq_dist(&q, pool.row(b))).then(a.cmp(&b)))
                .unwrap();
            assert_eq!(nearest_neighbor(&q, &pool).unwrap(), scan);
        }
    }
}
