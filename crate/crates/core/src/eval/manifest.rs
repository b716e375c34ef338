//! Tasks manifest: a JSON list of tasks whose features (FINF) and label
//! files live next to it. Label files are `sample,label` CSVs where a
//! multi-label sample lists its labels separated by `;`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Metric, TargetTask, TaskSplit};
use crate::data::{load_features, save_features};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TaskEntry {
    name: String,
    metric: Metric,
    train_features: PathBuf,
    train_labels: PathBuf,
    test_features: PathBuf,
    test_labels: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tasks: Vec<TaskEntry>,
}

fn write_label_sets(sets: &[Vec<usize>], path: &Path) -> Result<()> {
    let mut s = String::from("sample,label\n");
    for (i, set) in sets.iter().enumerate() {
        let joined: Vec<String> = set.iter().map(usize::to_string).collect();
        s.push_str(&format!("{i},{}\n", joined.join(";")));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_label_sets(path: &Path, n: usize) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out: Vec<Option<Vec<usize>>> = vec![None; n];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Labels(format!("{}: {e}", path.display())))?;
        let bad = |s: &str| Error::Labels(format!("{}: `{s}` is not an index", path.display()));
        let sample: usize = record.get(0).unwrap_or("").parse().map_err(|_| bad(record.get(0).unwrap_or("")))?;
        let field = record.get(1).unwrap_or("");
        let set = field
            .split(';')
            .map(|t| t.trim().parse::<usize>().map_err(|_| bad(t)))
            .collect::<Result<Vec<_>>>()?;
        let slot = out
            .get_mut(sample)
            .ok_or_else(|| Error::Labels(format!("{}: sample {sample} out of range", path.display())))?;
        if slot.replace(set).is_some() {
            return Err(Error::Labels(format!("{}: sample {sample} listed twice", path.display())));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Labels(format!("{}: sample {i} missing", path.display()))))
        .collect()
}

/// Writes every task's splits into `dir` and returns the manifest path.
pub fn save_tasks(tasks: &[TargetTask], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for t in tasks {
        let file = |suffix: &str| PathBuf::from(format!("task_{}_{suffix}", t.name));
        let entry = TaskEntry {
            name: t.name.clone(),
            metric: t.metric,
            train_features: file("train.finf"),
            train_labels: file("train_labels.csv"),
            test_features: file("test.finf"),
            test_labels: file("test_labels.csv"),
        };
        save_features(&t.train.features, dir.join(&entry.train_features))?;
        write_label_sets(&t.train.labels, &dir.join(&entry.train_labels))?;
        save_features(&t.test.features, dir.join(&entry.test_features))?;
        write_label_sets(&t.test.labels, &dir.join(&entry.test_labels))?;
        entries.push(entry);
    }
    let path = dir.join("tasks.json");
    let json = serde_json::to_string_pretty(&Manifest { tasks: entries })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a manifest; relative paths resolve against its directory.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TargetTask>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .tasks
        .into_iter()
        .map(|e| {
            let split = |f: &Path, l: &Path| -> Result<TaskSplit> {
                let features = load_features(base.join(f))?;
                let labels = read_label_sets(&base.join(l), features.n_samples())?;
                TaskSplit::new(features, labels)
            };
            let train = split(&e.train_features, &e.train_labels)?;
            let test = split(&e.test_features, &e.test_labels)?;
            TargetTask::new(e.name, e.metric, train, test)
        })
        .collect()
}
