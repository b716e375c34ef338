//! Planted-subconcept data: each source class is a mixture of hidden
//! Gaussian subconcepts, and target tasks are built over those subconcepts
//! from fresh draws of the same process.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{Metric, TargetTask, TaskSplit};
use crate::hierarchy::FinerAssignment;
use crate::rng::{stream, tags};

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub subconcepts_per_class: usize,
    pub samples_per_subconcept: usize,
    pub dim: usize,
    pub within_std: f64,
    /// Minimum distance between subconcept centres, in units of `within_std`.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            subconcepts_per_class: 3,
            samples_per_subconcept: 60,
            dim: 16,
            within_std: 1.0,
            separation: 6.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn subconcept_count(&self) -> usize {
        self.n_classes * self.subconcepts_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.subconcepts_per_class == 0 || self.samples_per_subconcept == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if !(self.separation > 0.0 && self.within_std > 0.0) {
            return Err(Error::Config("separation and within_std must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth behind a generated source dataset. Subconcept `s` belongs
/// to class `s / subconcepts_per_class`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub subconcept: Vec<usize>,
    pub class_labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub subconcepts_per_class: usize,
}

impl PlantedTruth {
    pub fn class_of(&self, subconcept: usize) -> usize {
        subconcept / self.subconcepts_per_class
    }
}

/// Centres uniform in a cube of side `separation · std · count^(1/dim)`,
/// rejecting any draw closer than `separation · std` to an accepted one.
fn place_centers(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    let count = spec.subconcept_count();
    let min_dist = spec.separation * spec.within_std;
    let side = min_dist * (count as f64).powf(1.0 / spec.dim as f64);
    let mut rng = stream(spec.seed, &[tags::SOURCE, 0]);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    for s in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(0.0..side)).collect();
            if centers.iter().all(|o| crate::math::sq_dist(o, &c) >= min_dist * min_dist) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place subconcept {s} of {count} at separation {}; increase dim or lower separation",
                spec.separation
            )));
        }
    }
    Ok(centers)
}

/// `per` draws around each centre, subconcept-major, rounded to f32 so the
/// data survive a FINF round trip unchanged.
fn sample_around(centers: &[Vec<f64>], per: usize, std: f64, rng: &mut impl Rng) -> (FeatureMatrix, Vec<usize>) {
    let dim = centers[0].len();
    let mut values = Vec::with_capacity(centers.len() * per * dim);
    let mut labels = Vec::with_capacity(centers.len() * per);
    for (s, c) in centers.iter().enumerate() {
        for _ in 0..per {
            for &m in c {
                let z: f64 = rng.sample(StandardNormal);
                values.push((m + std * z) as f32 as f64);
            }
            labels.push(s);
        }
    }
    (FeatureMatrix::from_raw_unchecked(labels.len(), dim, values), labels)
}

pub fn generate_source(spec: &SynthSpec) -> Result<(LabeledDataset, PlantedTruth)> {
    spec.validate()?;
    let centers = place_centers(spec)?;
    let mut rng = stream(spec.seed, &[tags::SOURCE, 1]);
    let (features, subconcept) = sample_around(&centers, spec.samples_per_subconcept, spec.within_std, &mut rng);
    let g = spec.subconcepts_per_class;
    let class_labels: Vec<usize> = subconcept.iter().map(|s| s / g).collect();
    let d = LabeledDataset::new(features, class_labels.clone(), 0, spec.n_classes)?;
    Ok((d, PlantedTruth { subconcept, class_labels, centers, subconcepts_per_class: g }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Classify every planted subconcept.
    SubconceptId,
    /// Classes that union subconcepts taken from different source classes.
    Recombined,
    /// Subconcept identification with every mean moved by one `within_std`.
    Shifted,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::SubconceptId, TargetKind::Recombined, TargetKind::Shifted];

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::SubconceptId => "subconcept-id",
            TargetKind::Recombined => "recombined",
            TargetKind::Shifted => "shifted",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetSpec {
    pub kinds: Vec<TargetKind>,
    pub train_per_subconcept: usize,
    pub test_per_subconcept: usize,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { kinds: TargetKind::ALL.to_vec(), train_per_subconcept: 10, test_per_subconcept: 20 }
    }
}

/// Target class of every subconcept for the recombined task: target `t`
/// takes subconcept `g` of source class `σ((t + g) mod C)`, so no target
/// ever holds two subconcepts of one source class.
pub fn recombination(truth: &PlantedTruth, n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    let g = truth.subconcepts_per_class;
    if g > n_classes {
        return Err(Error::Infeasible(format!(
            "cannot recombine {g} subconcepts per class across only {n_classes} classes"
        )));
    }
    let mut sigma: Vec<usize> = (0..n_classes).collect();
    sigma.shuffle(&mut stream(seed, &[tags::TARGET, 0]));
    let mut target_of = vec![0; truth.centers.len()];
    for t in 0..n_classes {
        for j in 0..g {
            let class = sigma[(t + j) % n_classes];
            target_of[class * g + j] = t;
        }
    }
    Ok(target_of)
}

pub fn generate_targets(truth: &PlantedTruth, spec: &SynthSpec, targets: &TargetSpec) -> Result<Vec<TargetTask>> {
    spec.validate()?;
    if targets.train_per_subconcept == 0 || targets.test_per_subconcept == 0 {
        return Err(Error::Config("target splits need at least one sample per subconcept".into()));
    }
    targets
        .kinds
        .iter()
        .map(|&kind| {
            let mut rng = stream(spec.seed, &[tags::TARGET, kind.tag()]);
            let centers = match kind {
                TargetKind::Shifted => truth
                    .centers
                    .iter()
                    .map(|c| {
                        let dir: Vec<f64> = (0..c.len()).map(|_| rng.sample(StandardNormal)).collect();
                        let n = crate::math::dot(&dir, &dir).sqrt();
                        c.iter().zip(&dir).map(|(m, u)| m + spec.within_std * u / n).collect()
                    })
                    .collect(),
                _ => truth.centers.clone(),
            };
            let map: Vec<usize> = match kind {
                TargetKind::Recombined => recombination(truth, spec.n_classes, spec.seed)?,
                _ => (0..centers.len()).collect(),
            };
            let (tr, ltr) = sample_around(&centers, targets.train_per_subconcept, spec.within_std, &mut rng);
            let (te, lte) = sample_around(&centers, targets.test_per_subconcept, spec.within_std, &mut rng);
            let relabel = |l: Vec<usize>| l.into_iter().map(|s| map[s]).collect::<Vec<_>>();
            TargetTask::new(
                kind.name(),
                Metric::Accuracy,
                TaskSplit::single(tr, &relabel(ltr))?,
                TaskSplit::single(te, &relabel(lte))?,
            )
        })
        .collect()
}

/// Adjusted Rand index from the contingency table.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same samples");
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let dense = |p: &[usize]| {
        let mut ids: Vec<usize> = p.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let map: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        (p.iter().map(|v| map[v]).collect::<Vec<_>>(), ids.len())
    };
    let (da, ka) = dense(a);
    let (db, kb) = dense(b);
    let mut table = vec![0f64; ka * kb];
    for (&x, &y) in da.iter().zip(&db) {
        table[x * kb + y] += 1.0;
    }
    let index: f64 = table.iter().map(|&v| comb2(v)).sum();
    let rows: f64 = (0..ka).map(|i| comb2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| comb2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = comb2(a.len() as f64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAri {
    pub global: f64,
    pub per_class: Vec<f64>,
}

pub fn planted_ari(fa: &FinerAssignment, truth: &PlantedTruth) -> Result<PlantedAri> {
    if fa.labels.len() != truth.subconcept.len() {
        return Err(Error::Coverage(format!(
            "assignment covers {} samples, planted truth {}",
            fa.labels.len(),
            truth.subconcept.len()
        )));
    }
    let global = adjusted_rand_index(&fa.labels, &truth.subconcept);
    let n_classes = truth.class_labels.iter().max().map_or(0, |m| m + 1);
    let per_class = (0..n_classes)
        .map(|c| {
            let idx: Vec<usize> = (0..fa.labels.len()).filter(|&i| truth.class_labels[i] == c).collect();
            let a: Vec<usize> = idx.iter().map(|&i| fa.labels[i]).collect();
            let b: Vec<usize> = idx.iter().map(|&i| truth.subconcept[i]).collect();
            adjusted_rand_index(&a, &b)
        })
        .collect();
    Ok(PlantedAri { global, per_class })
}

/// The planted subconcepts as a finer assignment.
pub fn truth_assignment(truth: &PlantedTruth) -> FinerAssignment {
    let g = truth.subconcepts_per_class;
    FinerAssignment {
        labels: truth.subconcept.clone(),
        specific_labels: truth.class_labels.clone(),
        finer_class_count: truth.centers.len(),
        parent_map: (0..truth.centers.len()).map(|s| s / g).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitters::test_support::pair_ari;
    use proptest::prelude::{any, prop, prop_assert, proptest};

    #[test]
    fn default_counts() {
        let spec = SynthSpec::default();
        let (d, truth) = generate_source(&spec).unwrap();
        assert_eq!(d.n_samples(), 1800);
        assert_eq!(truth.centers.len(), 30);
        assert_eq!(d.class_sizes(), vec![180; 10]);
        let min = (spec.separation * spec.within_std).powi(2);
        for i in 0..30 {
            for j in i + 1..30 {
                assert!(crate::math::sq_dist(&truth.centers[i], &truth.centers[j]) >= min);
            }
        }
        // Grouping subconcepts by class recovers the class labels.
        for (i, &s) in truth.subconcept.iter().enumerate() {
            assert_eq!(truth.class_of(s), d.labels()[i]);
        }
    }

    #[test]
    fn single_subconcept_equals_classes() {
        let spec = SynthSpec { subconcepts_per_class: 1, ..SynthSpec::default() };
        let (d, truth) = generate_source(&spec).unwrap();
        assert_eq!(truth.subconcept, d.labels());
    }

    #[test]
    fn deterministic_and_f32_exact() {
        let spec = SynthSpec { n_classes: 3, ..SynthSpec::default() };
        let (a, _) = generate_source(&spec).unwrap();
        let (b, _) = generate_source(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.features().round_to_f32(), *a.features());
        let (c, _) = generate_source(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_packing_reported() {
        // 2000 centres on a line exactly long enough for perfect spacing:
        // random sequential placement jams long before that.
        let spec = SynthSpec { dim: 1, n_classes: 1000, subconcepts_per_class: 2, separation: 50.0, ..SynthSpec::default() };
        assert!(matches!(generate_source(&spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn target_suite_structure() {
        let spec = SynthSpec::default();
        let (d, truth) = generate_source(&spec).unwrap();
        let tasks = generate_targets(&truth, &spec, &TargetSpec::default()).unwrap();
        assert_eq!(tasks.len(), 3);
        assert_eq!(tasks[0].name, "subconcept-id");
        assert_eq!(tasks[0].class_count, 30);
        assert_eq!(tasks[1].class_count, 10);
        let map = recombination(&truth, 10, spec.seed).unwrap();
        for t in 0..10 {
            let members: Vec<usize> = (0..30).filter(|&s| map[s] == t).collect();
            let mut classes: Vec<usize> = members.iter().map(|&s| truth.class_of(s)).collect();
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes.len(), members.len(), "target {t} repeats a source class");
        }
        // No source row reappears in any target split.
        let source: std::collections::HashSet<Vec<u64>> =
            d.features().rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        for t in &tasks {
            for r in t.train.features.rows().chain(t.test.features.rows()) {
                assert!(!source.contains(&r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
            }
        }
        let one = TargetSpec { kinds: vec![TargetKind::Shifted], ..TargetSpec::default() };
        assert_eq!(generate_targets(&truth, &spec, &one).unwrap().len(), 1);
    }

    #[test]
    fn ari_examples() {
        let spec = SynthSpec::default();
        let (d, truth) = generate_source(&spec).unwrap();
        let exact = planted_ari(&truth_assignment(&truth), &truth).unwrap();
        assert_eq!(exact.global, 1.0);
        assert!(exact.per_class.iter().all(|&a| a == 1.0));

        let collapsed = FinerAssignment {
            labels: d.labels().to_vec(),
            specific_labels: d.labels().to_vec(),
            finer_class_count: 10,
            parent_map: (0..10).collect(),
        };
        assert!(planted_ari(&collapsed, &truth).unwrap().per_class.iter().all(|&a| a == 0.0));

        let views = crate::data::class_views(&d);
        let random = crate::splitters::split_dataset(&d, &crate::splitters::SplitMethod::Random { k: 3 }, 42).unwrap();
        let (_, fa) = crate::hierarchy::add_finer_level(&crate::hierarchy::Hierarchy::flat(10), d.labels(), &random).unwrap();
        let r = planted_ari(&fa, &truth).unwrap();
        assert!(r.per_class.iter().all(|a| a.abs() < 0.1), "{:?}", r.per_class);
        assert_eq!(views.len(), 10);
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting_and_is_symmetric(a in prop::collection::vec(0usize..4, 2..40), seed in any::<u64>()) {
            let mut rng = stream(seed, &[]);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let x = adjusted_rand_index(&a, &b);
            prop_assert!((x - adjusted_rand_index(&b, &a)).abs() < 1e-12);
            prop_assert!((x - pair_ari(&a, &b)).abs() < 1e-9);
            let renamed: Vec<usize> = a.iter().map(|v| 10 - v).collect();
            prop_assert!((adjusted_rand_index(&a, &renamed) - 1.0).abs() < 1e-12);
        }
    }
}
