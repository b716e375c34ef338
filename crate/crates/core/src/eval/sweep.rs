//! Average transfer scores of FiNet and SpeFiNet as a function of K for a
//! fixed-K splitter.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{default_probe, evaluate_representation, Representation, TargetTask};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linear::LinearConfig;
use crate::pipeline::{finer_level, probe_seeded, stored_features, train_spenet};
use crate::probe::{train_probe, ProbeConfig};
use crate::rng::{derive_seed, tags};
use crate::splitters::{split_dataset, SplitMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    /// One of `random`, `kmeans`, `spectral`.
    pub method: String,
    pub spe_probe: ProbeConfig,
    pub fine_probe: ProbeConfig,
    pub eval: LinearConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ks: vec![2, 4, 8, 16],
            method: "kmeans".into(),
            spe_probe: ProbeConfig::default(),
            fine_probe: ProbeConfig::default(),
            eval: default_probe(),
            seed: 42,
        }
    }
}

impl SweepConfig {
    fn method(&self, k: usize) -> Result<SplitMethod> {
        match self.method.as_str() {
            "random" => Ok(SplitMethod::Random { k }),
            "kmeans" => Ok(SplitMethod::Kmeans { k }),
            "spectral" => Ok(SplitMethod::Spectral { k }),
            other => Err(Error::Config(format!("sweep needs a fixed-K splitter, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub spenet: f64,
    pub finet: f64,
    pub spefinet: f64,
}

/// Trains the specific probe once, then for every K splits, retrains the
/// finer probe and evaluates FiNet and SpeFiNet on `tasks`.
pub fn k_sweep(base: &LabeledDataset, tasks: &[TargetTask], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(Error::Config("K values must be at least 1".into()));
    }
    let spe_cfg = probe_seeded(&cfg.spe_probe, cfg.seed, tags::SPE_PROBE);
    let (spe, _) = train_spenet(base, &spe_cfg)?;
    let spe_view = base.with_features(stored_features(&spe, base.features())?)?;
    let spenet = evaluate_representation(&Representation::Spe(spe.clone()), tasks, &cfg.eval, None)?.average;
    let fine_cfg = probe_seeded(&cfg.fine_probe, cfg.seed, tags::FINE_PROBE);
    cfg.ks
        .iter()
        .map(|&k| {
            let method = cfg.method(k)?;
            let assignments = split_dataset(&spe_view, &method, derive_seed(cfg.seed, &[tags::SPLIT]))?;
            let (_, _, fine_ds) = finer_level(base, &assignments)?;
            let (fine, _) = train_probe(&fine_ds, fine_cfg.hidden_dim, &fine_cfg.train)?;
            let name = Some(method.name());
            let finet = evaluate_representation(&Representation::Fine(fine.clone()), tasks, &cfg.eval, name.clone())?.average;
            let spefinet = evaluate_representation(&Representation::SpeFine { spe: spe.clone(), fine }, tasks, &cfg.eval, name)?.average;
            Ok(SweepRow { k, spenet, finet, spefinet })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,finet_avg,spefinet_avg,spenet_avg\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.k, r.finet, r.spefinet, r.spenet);
    }
    s
}
