//! Transfer evaluation: frozen representations, one-vs-all linear probes
//! per target task, and a report averaging the task scores.
//!
//! Task scores are averaged as they are, even when some tasks report
//! accuracy and others mAP.

mod manifest;
mod metrics;
mod sweep;

pub use manifest::{load_tasks, save_tasks};
pub use metrics::{accuracy, average_precision, mean_ap, ranking};
pub use sweep::{k_sweep, sweep_csv, SweepConfig, SweepRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::fusion::fuse;
use crate::linear::{train_ova_targets, LinearConfig, LossKind};
use crate::probe::{extract_features, ProbeModel};

pub const AP_VARIANT: &str = "non-interpolated, ties broken by lower index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Map,
}

/// Features in the input space plus one label set per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub features: FeatureMatrix,
    pub labels: Vec<Vec<usize>>,
}

impl TaskSplit {
    pub fn single(features: FeatureMatrix, labels: &[usize]) -> Result<Self> {
        Self::new(features, labels.iter().map(|&l| vec![l]).collect())
    }

    pub fn new(features: FeatureMatrix, labels: Vec<Vec<usize>>) -> Result<Self> {
        if features.n_samples() != labels.len() {
            return Err(Error::shape(format!(
                "{} samples but {} label sets",
                features.n_samples(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    fn relevance(&self, class: usize) -> Vec<bool> {
        self.labels.iter().map(|s| s.contains(&class)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTask {
    pub name: String,
    pub metric: Metric,
    pub class_count: usize,
    pub train: TaskSplit,
    pub test: TaskSplit,
}

impl TargetTask {
    pub fn new(name: impl Into<String>, metric: Metric, train: TaskSplit, test: TaskSplit) -> Result<Self> {
        let name = name.into();
        if train.features.dim() != test.features.dim() {
            return Err(Error::shape(format!("task {name}: train and test dims differ")));
        }
        let class_count = train
            .labels
            .iter()
            .chain(&test.labels)
            .flatten()
            .max()
            .map_or(0, |m| m + 1);
        if class_count < 2 {
            return Err(Error::invalid(format!("task {name}: needs at least two classes")));
        }
        let multilabel = train.labels.iter().chain(&test.labels).any(|s| s.len() != 1);
        if metric == Metric::Accuracy && multilabel {
            return Err(Error::invalid(format!("task {name}: accuracy needs exactly one label per sample")));
        }
        if train.labels.is_empty() || test.labels.is_empty() {
            return Err(Error::invalid(format!("task {name}: empty split")));
        }
        Ok(Self { name, metric, class_count, train, test })
    }

    pub fn is_multilabel(&self) -> bool {
        self.train.labels.iter().chain(&self.test.labels).any(|s| s.len() != 1)
    }
}

/// A frozen feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Identity,
    Spe(ProbeModel),
    Fine(ProbeModel),
    SpeFine { spe: ProbeModel, fine: ProbeModel },
}

impl Representation {
    pub fn name(&self) -> &'static str {
        match self {
            Representation::Identity => "identity",
            Representation::Spe(_) => "SpeNet",
            Representation::Fine(_) => "FiNet",
            Representation::SpeFine { .. } => "SpeFiNet",
        }
    }

    pub fn extract(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        match self {
            Representation::Identity => Ok(f.clone()),
            Representation::Spe(m) | Representation::Fine(m) => extract_features(m, f),
            Representation::SpeFine { spe, fine } => {
                Ok(fuse(&extract_features(spe, f)?, &extract_features(fine, f)?)?.matrix)
            }
        }
    }

    /// Digest of every parameter the extractor holds.
    pub fn fingerprint(&self) -> String {
        match self {
            Representation::Identity => hex::encode(Sha256::digest(b"identity")),
            Representation::Spe(m) | Representation::Fine(m) => m.fingerprint(),
            Representation::SpeFine { spe, fine } => {
                hex::encode(Sha256::digest(format!("{}{}", spe.fingerprint(), fine.fingerprint())))
            }
        }
    }
}

/// Target probes default to the hinge loss.
pub fn default_probe() -> LinearConfig {
    LinearConfig { loss: LossKind::Hinge, ..LinearConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub name: String,
    pub metric: Metric,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub representation: String,
    pub splitter: Option<String>,
    pub tasks: Vec<TaskScore>,
    pub average: f64,
    pub ap_variant: String,
    pub probe: LinearConfig,
    pub extractor_fingerprint: String,
}

impl EvalReport {
    pub fn score(&self, task: &str) -> Option<f64> {
        self.tasks.iter().find(|t| t.name == task).map(|t| t.score)
    }
}

fn evaluate_task(repr: &Representation, task: &TargetTask, probe: &LinearConfig) -> Result<f64> {
    let train = repr.extract(&task.train.features)?;
    let test = repr.extract(&task.test.features)?;
    let targets: Vec<Vec<f64>> = (0..task.class_count)
        .map(|c| task.train.relevance(c).iter().map(|&r| if r { 1.0 } else { -1.0 }).collect())
        .collect();
    let ova = train_ova_targets(&train, &targets, probe)?;
    match task.metric {
        Metric::Accuracy => {
            let truth: Vec<usize> = task.test.labels.iter().map(|s| s[0]).collect();
            accuracy(&ova.predict(&test)?, &truth)
        }
        Metric::Map => {
            let per_class = ova.scores(&test)?;
            let relevance: Vec<Vec<bool>> = (0..task.class_count).map(|c| task.test.relevance(c)).collect();
            mean_ap(&per_class, &relevance)
        }
    }
}

/// Trains a probe per task on the frozen representation and scores it on
/// the task's test split. The extractor is checksummed before and after.
pub fn evaluate_representation(
    repr: &Representation,
    tasks: &[TargetTask],
    probe: &LinearConfig,
    splitter: Option<String>,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::invalid("no target tasks to evaluate"));
    }
    let before = repr.fingerprint();
    let scores = tasks
        .par_iter()
        .map(|t| evaluate_task(repr, t, probe).map_err(|e| Error::Format(format!("task {}: {e}", t.name))))
        .collect::<Result<Vec<f64>>>()?;
    if repr.fingerprint() != before {
        return Err(Error::invalid("representation parameters changed during evaluation"));
    }
    let average = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(EvalReport {
        representation: repr.name().to_string(),
        splitter,
        tasks: tasks
            .iter()
            .zip(&scores)
            .map(|(t, &score)| TaskScore { name: t.name.clone(), metric: t.metric, score })
            .collect(),
        average,
        ap_variant: AP_VARIANT.to_string(),
        probe: *probe,
        extractor_fingerprint: before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::test_support::blobs;

    fn separable_task(name: &str, seed: u64) -> TargetTask {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]];
        let (tr, ltr) = blobs(&centers, 20, 0.5, seed);
        let (te, lte) = blobs(&centers, 10, 0.5, seed + 1);
        TargetTask::new(name, Metric::Accuracy, TaskSplit::single(tr, &ltr).unwrap(), TaskSplit::single(te, &lte).unwrap())
            .unwrap()
    }

    #[test]
    fn identity_on_separable_task_is_perfect() {
        let r = evaluate_representation(&Representation::Identity, &[separable_task("a", 1)], &default_probe(), None).unwrap();
        assert_eq!(r.tasks[0].score, 1.0);
        assert_eq!(r.average, 1.0);
    }

    #[test]
    fn identical_tasks_identical_scores() {
        let m = ProbeModel::init(2, 4, 3, 5).unwrap();
        let tasks = [separable_task("a", 2), separable_task("b", 2)];
        let r = evaluate_representation(&Representation::Spe(m), &tasks, &default_probe(), None).unwrap();
        assert_eq!(r.tasks[0].score, r.tasks[1].score);
        assert!((r.average - r.tasks[0].score).abs() < 1e-12);
    }

    #[test]
    fn map_task_and_average() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
        let (tr, ltr) = blobs(&centers, 15, 0.5, 3);
        let (te, lte) = blobs(&centers, 15, 0.5, 4);
        // Multi-label: every third sample also carries class 2.
        let multi = |l: &[usize]| l.iter().enumerate().map(|(i, &c)| if i % 3 == 0 { vec![c, 2] } else { vec![c] }).collect();
        let t = TargetTask::new("voc", Metric::Map, TaskSplit::new(tr, multi(&ltr)).unwrap(), TaskSplit::new(te, multi(&lte)).unwrap()).unwrap();
        assert!(t.is_multilabel());
        let tasks = [t, separable_task("acc", 5)];
        let r = evaluate_representation(&Representation::Identity, &tasks, &default_probe(), Some("x".into())).unwrap();
        assert!(r.tasks[0].score > 0.5 && r.tasks[0].score <= 1.0);
        assert!((r.average - (r.tasks[0].score + r.tasks[1].score) / 2.0).abs() < 1e-12);
        assert_eq!(r.ap_variant, AP_VARIANT);
    }

    #[test]
    fn task_validation() {
        let f = FeatureMatrix::zeros(2, 2);
        let bad = TaskSplit::new(f.clone(), vec![vec![0, 1], vec![1]]).unwrap();
        let ok = TaskSplit::single(f.clone(), &[0, 1]).unwrap();
        assert!(TargetTask::new("t", Metric::Accuracy, bad, ok.clone()).is_err());
        assert!(TargetTask::new("t", Metric::Accuracy, ok.clone(), TaskSplit::single(FeatureMatrix::zeros(2, 3), &[0, 1]).unwrap()).is_err());
        assert!(evaluate_representation(&Representation::Identity, &[], &default_probe(), None).is_err());
    }
}
