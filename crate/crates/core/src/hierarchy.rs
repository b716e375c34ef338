//! Leveled class hierarchy and the finer level built from per-class splits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::splitters::ClusterAssignment;

/// Provenance of a node: which class it refines and which local cluster it was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub source_class: Option<usize>,
    pub local_cluster: Option<usize>,
}

/// A leveled DAG of class nodes. Node ids are global; `levels[l]` lists the
/// ids of level `l` in class-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    levels: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    meta: BTreeMap<usize, NodeMeta>,
}

impl Hierarchy {
    /// One level of `n_classes` nodes and no edges.
    pub fn flat(n_classes: usize) -> Self {
        let ids: Vec<usize> = (0..n_classes).collect();
        let meta = ids
            .iter()
            .map(|&i| {
                (
                    i,
                    NodeMeta {
                        source_class: None,
                        local_cluster: None,
                    },
                )
            })
            .collect();
        Self {
            levels: vec![ids],
            edges: Vec::new(),
            meta,
        }
    }

    /// Assembles a hierarchy without checking it; see [`validate_hierarchy`].
    pub fn from_parts(
        levels: Vec<Vec<usize>>,
        edges: Vec<(usize, usize)>,
        meta: BTreeMap<usize, NodeMeta>,
    ) -> Self {
        Self { levels, edges, meta }
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn meta(&self) -> &BTreeMap<usize, NodeMeta> {
        &self.meta
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Number of classes at the finest level.
    pub fn leaf_count(&self) -> usize {
        self.levels.last().map_or(0, Vec::len)
    }

    fn next_id(&self) -> usize {
        self.levels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Per-sample labels at the new finer level plus the finer → specific map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinerAssignment {
    pub labels: Vec<usize>,
    pub specific_labels: Vec<usize>,
    pub finer_class_count: usize,
    pub parent_map: Vec<usize>,
}

impl FinerAssignment {
    /// Splits back into one [`ClusterAssignment`] per specific class.
    pub fn to_cluster_assignments(&self) -> Result<Vec<ClusterAssignment>> {
        let n_specific = self.parent_map.iter().max().map_or(0, |m| m + 1);
        let mut first_child = vec![usize::MAX; n_specific];
        for (finer, &parent) in self.parent_map.iter().enumerate() {
            first_child[parent] = first_child[parent].min(finer);
        }
        let mut members: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); n_specific];
        for (i, (&finer, &spec)) in self.labels.iter().zip(&self.specific_labels).enumerate() {
            members[spec].0.push(i);
            members[spec].1.push(finer - first_child[spec]);
        }
        members
            .into_iter()
            .enumerate()
            .map(|(c, (idx, local))| ClusterAssignment::new(c, idx, local))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,specific_class,finer_class\n");
        for (i, (spec, fine)) in self.specific_labels.iter().zip(&self.labels).enumerate() {
            s.push_str(&format!("{i},{spec},{fine}\n"));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_csv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses the `sample,specific_class,finer_class` export.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Format(e.to_string()))?;
            let field = |k: usize| -> Result<usize> {
                record
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad assignment row {:?}", record)))
            };
            rows.push((field(0)?, field(1)?, field(2)?));
        }
        let n = rows.len();
        let mut labels = vec![usize::MAX; n];
        let mut specific = vec![usize::MAX; n];
        for (sample, spec, fine) in rows {
            if sample >= n || labels[sample] != usize::MAX {
                return Err(Error::Coverage(format!("sample {sample} out of range or repeated")));
            }
            labels[sample] = fine;
            specific[sample] = spec;
        }
        let finer_class_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut parent_map = vec![usize::MAX; finer_class_count];
        for (&fine, &spec) in labels.iter().zip(&specific) {
            if parent_map[fine] != usize::MAX && parent_map[fine] != spec {
                return Err(Error::Coverage(format!("finer class {fine} has two parents")));
            }
            parent_map[fine] = spec;
        }
        if let Some(empty) = parent_map.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Coverage(format!("finer class {empty} is empty")));
        }
        Ok(Self {
            labels,
            specific_labels: specific,
            finer_class_count,
            parent_map,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Appends level ℓ+1 below the leaves of `h`.
///
/// `specific_labels[s]` is the leaf class of sample `s`; `assignments` holds
/// exactly one split per leaf class. Finer classes are numbered class-major,
/// cluster-minor.
pub fn add_finer_level(
    h: &Hierarchy,
    specific_labels: &[usize],
    assignments: &[ClusterAssignment],
) -> Result<(Hierarchy, FinerAssignment)> {
    let n_leaves = h.leaf_count();
    if assignments.len() != n_leaves {
        return Err(Error::Coverage(format!(
            "{} assignments for {n_leaves} leaf classes",
            assignments.len()
        )));
    }
    let mut by_class: Vec<Option<&ClusterAssignment>> = vec![None; n_leaves];
    for a in assignments {
        let slot = by_class
            .get_mut(a.class_id)
            .ok_or_else(|| Error::Coverage(format!("assignment for unknown class {}", a.class_id)))?;
        if slot.replace(a).is_some() {
            return Err(Error::Coverage(format!("two assignments for class {}", a.class_id)));
        }
    }

    let n = specific_labels.len();
    let mut finer = vec![usize::MAX; n];
    let mut parent_map = Vec::new();
    let mut offset = 0usize;
    let leaves = h.levels.last().cloned().unwrap_or_default();
    let mut next_id = h.next_id();
    let mut new_level = Vec::new();
    let mut edges = h.edges.clone();
    let mut meta = h.meta.clone();

    for (class, a) in by_class.into_iter().enumerate() {
        let a = a.expect("every slot filled: counts match and duplicates rejected");
        if let Some(empty) = a.sizes.iter().position(|&s| s == 0) {
            return Err(Error::Coverage(format!("class {class}: cluster {empty} is empty")));
        }
        for (&s, &c) in a.sample_indices.iter().zip(&a.member_of) {
            if s >= n || specific_labels[s] != class {
                return Err(Error::Coverage(format!(
                    "class {class} assignment covers sample {s} of another class"
                )));
            }
            if finer[s] != usize::MAX {
                return Err(Error::Coverage(format!("sample {s} assigned twice")));
            }
            finer[s] = offset + c;
        }
        for local in 0..a.k {
            parent_map.push(class);
            new_level.push(next_id);
            edges.push((leaves[class], next_id));
            meta.insert(
                next_id,
                NodeMeta {
                    source_class: Some(class),
                    local_cluster: Some(local),
                },
            );
            next_id += 1;
        }
        offset += a.k;
    }
    if let Some(s) = finer.iter().position(|&f| f == usize::MAX) {
        return Err(Error::Coverage(format!("sample {s} not covered by any assignment")));
    }

    let mut levels = h.levels.clone();
    levels.push(new_level);
    Ok((
        Hierarchy { levels, edges, meta },
        FinerAssignment {
            labels: finer,
            specific_labels: specific_labels.to_vec(),
            finer_class_count: offset,
            parent_map,
        },
    ))
}

/// Same features, finer labels.
pub fn relabel_dataset(d: &LabeledDataset, fa: &FinerAssignment) -> Result<LabeledDataset> {
    if fa.labels.len() != d.n_samples() {
        return Err(Error::Coverage(format!(
            "finer assignment covers {} samples, dataset has {}",
            fa.labels.len(),
            d.n_samples()
        )));
    }
    for (i, (&fine, &spec)) in fa.labels.iter().zip(d.labels()).enumerate() {
        if fa.parent_map.get(fine) != Some(&spec) {
            return Err(Error::Coverage(format!(
                "sample {i}: finer class {fine} is not a child of class {spec}"
            )));
        }
    }
    LabeledDataset::new(
        d.features().clone(),
        fa.labels.clone(),
        d.level() + 1,
        fa.finer_class_count,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Edge between nodes that are not on consecutive levels.
    Leveling { parent: usize, child: usize },
    /// Finer node with more than one parent.
    MultipleParents { child: usize, parents: Vec<usize> },
    /// Non-root node with no parent.
    Orphan { node: usize },
    /// Edge endpoint that is not in any level.
    UnknownNode { node: usize },
    /// A level with no classes.
    EmptyLevel { level: usize },
    /// A node listed on more than one level.
    DuplicateNode { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Leveling { parent, child } => {
                write!(f, "edge {parent} -> {child} skips or repeats a level")
            }
            Violation::MultipleParents { child, parents } => {
                write!(f, "node {child} has parents {parents:?}")
            }
            Violation::Orphan { node } => write!(f, "node {node} has no parent"),
            Violation::UnknownNode { node } => write!(f, "edge references unknown node {node}"),
            Violation::EmptyLevel { level } => write!(f, "level {level} is empty"),
            Violation::DuplicateNode { node } => write!(f, "node {node} appears twice"),
        }
    }
}

/// Lists every structural problem; an empty list means the hierarchy is valid.
pub fn validate_hierarchy(h: &Hierarchy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut level_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (l, ids) in h.levels.iter().enumerate() {
        if ids.is_empty() {
            out.push(Violation::EmptyLevel { level: l });
        }
        for &id in ids {
            if level_of.insert(id, l).is_some() {
                out.push(Violation::DuplicateNode { node: id });
            }
        }
    }
    let mut parents: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(p, c) in &h.edges {
        match (level_of.get(&p), level_of.get(&c)) {
            (Some(&lp), Some(&lc)) => {
                if lc != lp + 1 {
                    out.push(Violation::Leveling { parent: p, child: c });
                }
                parents.entry(c).or_default().push(p);
            }
            (None, _) => out.push(Violation::UnknownNode { node: p }),
            (_, None) => out.push(Violation::UnknownNode { node: c }),
        }
    }
    for (&c, ps) in &parents {
        if ps.len() > 1 {
            out.push(Violation::MultipleParents {
                child: c,
                parents: ps.clone(),
            });
        }
    }
    for ids in h.levels.iter().skip(1) {
        for &id in ids {
            if !parents.contains_key(&id) {
                out.push(Violation::Orphan { node: id });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;
    use proptest::prelude::*;

    fn split(class_id: usize, idx: Vec<usize>, member_of: Vec<usize>) -> ClusterAssignment {
        ClusterAssignment::new(class_id, idx, member_of).unwrap()
    }

    /// Class `i` owns samples `[i*per, (i+1)*per)`; each split into `k` round-robin clusters.
    fn fixed_k(n_classes: usize, per: usize, k: usize) -> (Vec<usize>, Vec<ClusterAssignment>) {
        let labels: Vec<usize> = (0..n_classes * per).map(|s| s / per).collect();
        let assignments = (0..n_classes)
            .map(|c| split(c, (c * per..(c + 1) * per).collect(), (0..per).map(|j| j % k).collect()))
            .collect();
        (labels, assignments)
    }

    #[test]
    fn fixed_k_multiplies_class_count() {
        let (labels, assignments) = fixed_k(483, 8, 8);
        let (h, fa) = add_finer_level(&Hierarchy::flat(483), &labels, &assignments).unwrap();
        assert_eq!(fa.finer_class_count, 3864);
        assert_eq!(h.leaf_count(), 3864);
        assert!(validate_hierarchy(&h).is_empty());
    }

    #[test]
    fn identity_split_renumbers() {
        let labels = vec![1, 0, 1, 0];
        let a = vec![split(0, vec![1, 3], vec![0, 0]), split(1, vec![0, 2], vec![0, 0])];
        let (_, fa) = add_finer_level(&Hierarchy::flat(2), &labels, &a).unwrap();
        assert_eq!(fa.finer_class_count, 2);
        assert_eq!(fa.labels, labels);
        let d = LabeledDataset::from_labels(FeatureMatrix::zeros(4, 3), labels).unwrap();
        let r = relabel_dataset(&d, &fa).unwrap();
        assert_eq!(r.labels(), d.labels());
        assert_eq!((r.n_samples(), r.features().dim(), r.level()), (4, 3, 1));
    }

    #[test]
    fn uneven_k_counts_and_parent_map() {
        let labels = vec![0, 0, 1, 1, 1];
        let a = vec![split(0, vec![0, 1], vec![0, 1]), split(1, vec![2, 3, 4], vec![0, 1, 2])];
        let (h, fa) = add_finer_level(&Hierarchy::flat(2), &labels, &a).unwrap();
        assert_eq!(fa.finer_class_count, 5);
        assert_eq!(fa.parent_map, vec![0, 0, 1, 1, 1]);
        assert_eq!(fa.labels, vec![0, 1, 2, 3, 4]);
        assert_eq!(h.edges().len(), 5);
        assert_eq!(h.meta()[&6].source_class, Some(1));
        assert_eq!(h.meta()[&6].local_cluster, Some(2));
    }

    #[test]
    fn three_sample_split() {
        let labels = vec![0, 0, 0];
        let a = vec![split(0, vec![0, 1, 2], vec![0, 0, 1])];
        let (_, fa) = add_finer_level(&Hierarchy::flat(1), &labels, &a).unwrap();
        let d = LabeledDataset::from_labels(FeatureMatrix::zeros(3, 2), labels).unwrap();
        let r = relabel_dataset(&d, &fa).unwrap();
        assert_eq!(r.labels()[0], r.labels()[1]);
        assert_ne!(r.labels()[0], r.labels()[2]);
    }

    #[test]
    fn wrong_coverage_rejected() {
        let labels = vec![0, 0, 1];
        let a = vec![split(0, vec![0, 2], vec![0, 0]), split(1, vec![1], vec![0])];
        assert!(matches!(
            add_finer_level(&Hierarchy::flat(2), &labels, &a),
            Err(Error::Coverage(_))
        ));
        let missing = vec![split(0, vec![0], vec![0]), split(1, vec![2], vec![0])];
        assert!(add_finer_level(&Hierarchy::flat(2), &labels, &missing).is_err());
        let empty_cluster = ClusterAssignment {
            class_id: 0,
            sample_indices: vec![0, 1],
            member_of: vec![0, 0],
            k: 2,
            sizes: vec![2, 0],
        };
        let a = vec![empty_cluster, split(1, vec![2], vec![0])];
        assert!(add_finer_level(&Hierarchy::flat(2), &labels, &a).is_err());
    }

    #[test]
    fn relabel_rejects_mismatch() {
        let labels = vec![0, 1];
        let a = vec![split(0, vec![0], vec![0]), split(1, vec![1], vec![0])];
        let (_, fa) = add_finer_level(&Hierarchy::flat(2), &labels, &a).unwrap();
        let other = LabeledDataset::from_labels(FeatureMatrix::zeros(2, 1), vec![1, 0]).unwrap();
        assert!(relabel_dataset(&other, &fa).is_err());
        let short = LabeledDataset::from_labels(FeatureMatrix::zeros(1, 1), vec![0]).unwrap();
        assert!(relabel_dataset(&short, &fa).is_err());
    }

    #[test]
    fn validation_reports_corruption() {
        let (labels, a) = fixed_k(2, 4, 2);
        let (h, _) = add_finer_level(&Hierarchy::flat(2), &labels, &a).unwrap();
        assert!(validate_hierarchy(&h).is_empty());

        let mut edges = h.edges().to_vec();
        edges.push((0, 1));
        let bad = Hierarchy::from_parts(h.levels().to_vec(), edges, h.meta().clone());
        assert!(validate_hierarchy(&bad)
            .iter()
            .any(|v| matches!(v, Violation::Leveling { parent: 0, child: 1 })));

        let mut edges = h.edges().to_vec();
        edges.push((1, 2));
        let bad = Hierarchy::from_parts(h.levels().to_vec(), edges, h.meta().clone());
        assert!(validate_hierarchy(&bad)
            .iter()
            .any(|v| matches!(v, Violation::MultipleParents { child: 2, .. })));
    }

    #[test]
    fn json_and_csv_round_trip() {
        let (labels, a) = fixed_k(3, 4, 2);
        let (h, fa) = add_finer_level(&Hierarchy::flat(3), &labels, &a).unwrap();
        let json = h.to_json().unwrap();
        assert!(json.contains("\"levels\"") && json.contains("\"edges\"") && json.contains("\"meta\""));
        assert_eq!(Hierarchy::from_json(&json).unwrap(), h);
        let back = FinerAssignment::from_csv(&fa.to_csv()).unwrap();
        assert_eq!(back, fa);
        let per_class = back.to_cluster_assignments().unwrap();
        assert_eq!(per_class, a);
    }

    proptest! {
        #[test]
        fn counts_and_parent_recovery(ks in proptest::collection::vec(1usize..5, 1..8), per in 5usize..9) {
            let labels: Vec<usize> = (0..ks.len() * per).map(|s| s / per).collect();
            let assignments: Vec<_> = ks.iter().enumerate()
                .map(|(c, &k)| split(c, (c * per..(c + 1) * per).collect(), (0..per).map(|j| j % k).collect()))
                .collect();
            let (h, fa) = add_finer_level(&Hierarchy::flat(ks.len()), &labels, &assignments).unwrap();
            prop_assert_eq!(fa.finer_class_count, ks.iter().sum::<usize>());
            prop_assert!(validate_hierarchy(&h).is_empty());
            let d = LabeledDataset::from_labels(FeatureMatrix::zeros(labels.len(), 1), labels.clone()).unwrap();
            let r = relabel_dataset(&d, &fa).unwrap();
            let recovered: Vec<usize> = r.labels().iter().map(|&f| fa.parent_map[f]).collect();
            prop_assert_eq!(recovered, labels);
        }
    }
}
