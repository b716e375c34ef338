//! One-hidden-layer ReLU classifier trained with softmax cross-entropy by
//! minibatch SGD (classical momentum, L2 weight decay). The hidden layer is
//! the representation handed to downstream stages.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{self, Tensor};
use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    /// `input_dim × hidden_dim`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `hidden_dim × classes`, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted: it leaves the initial parameters untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Architecture plus optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, train: TrainConfig::default() }
    }
}

/// Mean full-dataset loss before training and after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl ProbeModel {
    /// Scaled-uniform initialisation `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be at least 1"));
        }
        if classes < 2 {
            return Err(Error::invalid("a probe needs at least two classes"));
        }
        let mut rng = stream(seed, &[tags::INIT]);
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = uniform(input_dim * hidden_dim, input_dim, hidden_dim);
        let w2 = uniform(hidden_dim * classes, hidden_dim, classes);
        Ok(Self {
            input_dim,
            hidden_dim,
            classes,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; classes],
        })
    }

    /// Builds a model from explicit parameters (row-major weights).
    pub fn from_parameters(
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if hidden_dim == 0 || classes < 2 {
            return Err(Error::invalid("need hidden_dim >= 1 and classes >= 2"));
        }
        if w1.len() != input_dim * hidden_dim || b1.len() != hidden_dim || w2.len() != hidden_dim * classes || b2.len() != classes {
            return Err(Error::shape("parameter lengths do not match the declared shape"));
        }
        if w1.iter().chain(&b1).chain(&w2).chain(&b2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self { input_dim, hidden_dim, classes, w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            if idx < buf.len() {
                return &mut buf[idx];
            }
            idx -= buf.len();
        }
        panic!("parameter index out of range");
    }

    fn hidden_pre(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b1);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b2);
        for (j, &hj) in h.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &self.w2[j * self.classes..(j + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += hj * w;
            }
        }
    }

    /// Class probabilities for every row of `f`.
    pub fn predict_proba(&self, f: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_dim(f)?;
        let mut z1 = vec![0.0; self.hidden_dim];
        let mut z2 = vec![0.0; self.classes];
        Ok(f.rows()
            .map(|x| {
                self.hidden_pre(x, &mut z1);
                z1.iter_mut().for_each(|v| *v = v.max(0.0));
                self.logits(&z1, &mut z2);
                softmax(&z2)
            })
            .collect())
    }

    pub fn predict(&self, f: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(f)?
            .iter()
            .map(|p| {
                let mut best = 0;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    fn check_dim(&self, f: &FeatureMatrix) -> Result<()> {
        if f.dim() != self.input_dim {
            return Err(Error::shape(format!(
                "probe expects dim {}, features have {}",
                self.input_dim,
                f.dim()
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy over the given rows.
    pub fn loss(&self, f: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        self.check_dim(f)?;
        let idx: Vec<usize> = (0..f.n_samples()).collect();
        Ok(self.batch_loss(f, labels, &idx))
    }

    fn batch_loss(&self, f: &FeatureMatrix, labels: &[usize], idx: &[usize]) -> f64 {
        let mut z1 = vec![0.0; self.hidden_dim];
        let mut z2 = vec![0.0; self.classes];
        let mut total = 0.0;
        for &i in idx {
            self.hidden_pre(f.row(i), &mut z1);
            z1.iter_mut().for_each(|v| *v = v.max(0.0));
            self.logits(&z1, &mut z2);
            total += log_sum_exp(&z2) - z2[labels[i]];
        }
        total / idx.len() as f64
    }

    /// Gradient of the mean cross-entropy over `idx`. With `relu_mask = false`
    /// the ReLU derivative is dropped (fault injection for the checker).
    fn backward(&self, f: &FeatureMatrix, labels: &[usize], idx: &[usize], relu_mask: bool) -> Grads {
        let (h_dim, c_dim) = (self.hidden_dim, self.classes);
        let mut g = Grads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; h_dim],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; c_dim],
        };
        let scale = 1.0 / idx.len() as f64;
        let mut z1 = vec![0.0; h_dim];
        let mut h = vec![0.0; h_dim];
        let mut z2 = vec![0.0; c_dim];
        let mut dh = vec![0.0; h_dim];
        for &i in idx {
            let x = f.row(i);
            self.hidden_pre(x, &mut z1);
            for (hv, &z) in h.iter_mut().zip(&z1) {
                *hv = z.max(0.0);
            }
            self.logits(&h, &mut z2);
            let mut dz2 = softmax(&z2);
            dz2[labels[i]] -= 1.0;
            dz2.iter_mut().for_each(|v| *v *= scale);
            for (gb, d) in g.b2.iter_mut().zip(&dz2) {
                *gb += d;
            }
            for j in 0..h_dim {
                let row = &self.w2[j * c_dim..(j + 1) * c_dim];
                dh[j] = row.iter().zip(&dz2).map(|(w, d)| w * d).sum();
                if h[j] != 0.0 {
                    let grow = &mut g.w2[j * c_dim..(j + 1) * c_dim];
                    for (gw, d) in grow.iter_mut().zip(&dz2) {
                        *gw += h[j] * d;
                    }
                }
                if relu_mask && z1[j] <= 0.0 {
                    dh[j] = 0.0;
                }
            }
            for (gb, d) in g.b1.iter_mut().zip(&dh) {
                *gb += d;
            }
            for (k, &xk) in x.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let grow = &mut g.w1[k * h_dim..(k + 1) * h_dim];
                for (gw, d) in grow.iter_mut().zip(&dh) {
                    *gw += xk * d;
                }
            }
        }
        g
    }

    fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::new(self.input_dim, self.hidden_dim, self.w1.clone()),
            Tensor::row_vector(self.b1.clone()),
            Tensor::new(self.hidden_dim, self.classes, self.w2.clone()),
            Tensor::row_vector(self.b2.clone()),
        ]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let t = container::decode(bytes)?;
        match t.as_slice() {
            [w1, b1, w2, b2] => Self::from_parameters(
                w1.rows,
                w1.cols,
                w2.cols,
                w1.values.clone(),
                b1.values.clone(),
                w2.values.clone(),
                b2.values.clone(),
            ),
            _ => Err(Error::Format(format!("probe checkpoint needs 4 tensors, found {}", t.len()))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(&self.to_tensors(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized parameters.
    pub fn fingerprint(&self) -> String {
        let bytes = self.to_bytes().expect("parameters are finite");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Trains a probe on `d`. Deterministic in `cfg.seed`: initialisation and
/// every epoch's shuffle come from their own derived streams.
pub fn train_probe(d: &LabeledDataset, hidden_dim: usize, cfg: &TrainConfig) -> Result<(ProbeModel, TrainHistory)> {
    cfg.validate()?;
    if d.class_count() < 2 {
        return Err(Error::invalid("probe training needs at least two classes"));
    }
    let f = d.features();
    let labels = d.labels();
    let mut model = ProbeModel::init(f.dim(), hidden_dim, d.class_count(), cfg.seed)?;
    let mut velocity = Grads {
        w1: vec![0.0; model.w1.len()],
        b1: vec![0.0; model.b1.len()],
        w2: vec![0.0; model.w2.len()],
        b2: vec![0.0; model.b2.len()],
    };
    let all: Vec<usize> = (0..f.n_samples()).collect();
    let initial_loss = model.batch_loss(f, labels, &all);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let (lr, mu, wd) = (cfg.learning_rate, cfg.momentum, cfg.weight_decay);

    for epoch in 0..cfg.epochs {
        let mut order = all.clone();
        order.shuffle(&mut stream(cfg.seed, &[tags::EPOCH, epoch as u64]));
        if lr > 0.0 {
            for batch in order.chunks(cfg.batch_size) {
                let g = model.backward(f, labels, batch, true);
                let step = |p: &mut [f64], v: &mut [f64], g: &[f64], decay: f64| {
                    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v - lr * (g + decay * *p);
                        *p += *v;
                    }
                };
                step(&mut model.w1, &mut velocity.w1, &g.w1, wd);
                step(&mut model.b1, &mut velocity.b1, &g.b1, 0.0);
                step(&mut model.w2, &mut velocity.w2, &g.w2, wd);
                step(&mut model.b2, &mut velocity.b2, &g.b2, 0.0);
            }
        }
        let loss = model.batch_loss(f, labels, &all);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        epoch_losses.push(loss);
    }
    Ok((model, TrainHistory { initial_loss, epoch_losses }))
}

/// Post-ReLU hidden activations for every row of `f`.
pub fn extract_features(m: &ProbeModel, f: &FeatureMatrix) -> Result<FeatureMatrix> {
    m.check_dim(f)?;
    let mut values = Vec::with_capacity(f.n_samples() * m.hidden_dim);
    let mut z1 = vec![0.0; m.hidden_dim];
    for x in f.rows() {
        m.hidden_pre(x, &mut z1);
        values.extend(z1.iter().map(|v| v.max(0.0)));
    }
    FeatureMatrix::new(f.n_samples(), m.hidden_dim, values)
}

const CHECK_EPS: f64 = 1e-5;
const CHECK_PARAMS: usize = 200;

fn check_impl(m: &ProbeModel, x: &FeatureMatrix, labels: &[usize], relu_mask: bool) -> Result<f64> {
    m.check_dim(x)?;
    if x.n_samples() == 0 || labels.len() != x.n_samples() {
        return Err(Error::invalid("gradient check needs a non-empty labelled batch"));
    }
    if labels.iter().any(|&l| l >= m.classes) {
        return Err(Error::invalid("batch label out of range"));
    }
    let idx: Vec<usize> = (0..x.n_samples()).collect();
    let g = m.backward(x, labels, &idx, relu_mask);
    let analytic: Vec<f64> = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2).copied().collect();
    let total = m.param_count();
    let chosen: Vec<usize> = if total <= CHECK_PARAMS {
        (0..total).collect()
    } else {
        let mut all: Vec<usize> = (0..total).collect();
        all.shuffle(&mut stream(0x4752_4144, &[]));
        all.truncate(CHECK_PARAMS);
        all
    };
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for p in chosen {
        let orig = *probe.param_mut(p);
        *probe.param_mut(p) = orig + CHECK_EPS;
        let up = probe.batch_loss(x, labels, &idx);
        *probe.param_mut(p) = orig - CHECK_EPS;
        let down = probe.batch_loss(x, labels, &idx);
        *probe.param_mut(p) = orig;
        let numeric = (up - down) / (2.0 * CHECK_EPS);
        let a = analytic[p];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Max relative error between backprop and central differences
/// (`ε = 1e-5`) over a sampled subset of parameters, on the mean
/// cross-entropy of `x`.
pub fn gradient_check(m: &ProbeModel, x: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    check_impl(m, x, labels, true)
}
