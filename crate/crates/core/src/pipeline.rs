//! Config-driven end-to-end run: train the specific probe, split every
//! class, build the finer level, train the finer probe, fuse, evaluate all
//! three representations and export cluster statistics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bucbam::{bucbam_split, BucbamConfig, BucbamOutput};
use crate::data::{load_dataset, save_features, save_labels, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{default_probe, evaluate_representation, load_tasks, save_tasks, EvalReport, Representation, TargetTask};
use crate::fusion::fuse;
use crate::hierarchy::{add_finer_level, relabel_dataset, FinerAssignment, Hierarchy};
use crate::linear::LinearConfig;
use crate::probe::{extract_features, train_probe, ProbeConfig, ProbeModel, TrainHistory};
use crate::rng::{derive_seed, tags};
use crate::splitters::{split_dataset, AffinityParams, ClusterAssignment, SplitMethod};
use crate::stats::{class_pcas, compute_cluster_stats, export_stats, StatsConfig};
use crate::synth::{generate_source, generate_targets, planted_ari, PlantedAri, PlantedTruth, SynthSpec, TargetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub tasks: PathBuf,
}

/// How classes are split into finer classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SplitterChoice {
    Bucbam(BucbamConfig),
    Random { k: usize },
    Kmeans { k: usize },
    Spectral { k: usize },
    Affinity(AffinityParams),
    Meanshift { bandwidth: f64 },
}

impl Default for SplitterChoice {
    fn default() -> Self {
        SplitterChoice::Bucbam(BucbamConfig::default())
    }
}

impl SplitterChoice {
    pub fn name(&self) -> String {
        match self {
            SplitterChoice::Bucbam(b) => format!("bucbam-{:?}", b.merge_mode).to_lowercase(),
            other => other.baseline().expect("not bucbam").name(),
        }
    }

    fn baseline(&self) -> Option<SplitMethod> {
        Some(match self {
            SplitterChoice::Bucbam(_) => return None,
            SplitterChoice::Random { k } => SplitMethod::Random { k: *k },
            SplitterChoice::Kmeans { k } => SplitMethod::Kmeans { k: *k },
            SplitterChoice::Spectral { k } => SplitMethod::Spectral { k: *k },
            SplitterChoice::Affinity(p) => SplitMethod::Affinity(*p),
            SplitterChoice::Meanshift { bandwidth } => SplitMethod::Meanshift { bandwidth: *bandwidth },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: Option<DataPaths>,
    pub synth: Option<SynthSpec>,
    pub targets: TargetSpec,
    pub spe_probe: ProbeConfig,
    pub fine_probe: ProbeConfig,
    pub splitter: SplitterChoice,
    pub eval: LinearConfig,
    pub stats: StatsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("run"),
            data: None,
            synth: Some(SynthSpec::default()),
            targets: TargetSpec::default(),
            spe_probe: ProbeConfig::default(),
            fine_probe: ProbeConfig::default(),
            splitter: SplitterChoice::default(),
            eval: default_probe(),
            stats: StatsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_toml_with_overrides(s, &[])
    }

    /// Parses `s`, then applies `key.path=value` overrides. Values are read
    /// as TOML (`3`, `0.5`, `true`, `[2, 4]`, `"ss"`) and fall back to a
    /// bare string.
    pub fn from_toml_with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(toml::Value::Table(sp)) = table.get_mut("splitter") {
            sp.entry("method").or_insert_with(|| toml::Value::String("bucbam".into()));
        }
        // A document naming only `[data]` means "no synthetic source".
        let data_only = table.contains_key("data") && !table.contains_key("synth");
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if data_only {
            cfg.synth = None;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("give either data paths or a synth spec, not both".into())),
            (None, None) => return Err(Error::Config("give data paths or a synth spec".into())),
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        for p in [&self.spe_probe, &self.fine_probe] {
            p.train.validate().map_err(|e| Error::Config(e.to_string()))?;
            if p.hidden_dim == 0 {
                return Err(Error::Config("hidden_dim must be at least 1".into()));
            }
        }
        match &self.splitter {
            SplitterChoice::Bucbam(b) => b.validate()?,
            SplitterChoice::Random { k } | SplitterChoice::Kmeans { k } | SplitterChoice::Spectral { k } if *k == 0 => {
                return Err(Error::Config("k must be at least 1".into()))
            }
            SplitterChoice::Meanshift { bandwidth } if !(*bandwidth > 0.0) => {
                return Err(Error::Config("bandwidth must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Training settings with the seed mixed with the master seed.
pub fn probe_seeded(cfg: &ProbeConfig, master: u64, tag: u64) -> ProbeConfig {
    let mut c = *cfg;
    c.train.seed = derive_seed(master, &[tag, cfg.train.seed]);
    c
}

pub fn train_spenet(d: &LabeledDataset, cfg: &ProbeConfig) -> Result<(ProbeModel, TrainHistory)> {
    train_probe(d, cfg.hidden_dim, &cfg.train)
}

/// Extracted features rounded to the FINF storage precision, so a run
/// resumed from the saved file sees exactly the same numbers.
pub fn stored_features(m: &ProbeModel, f: &FeatureMatrix) -> Result<FeatureMatrix> {
    Ok(extract_features(m, f)?.round_to_f32())
}

/// Level ℓ+1 of a flat hierarchy plus the relabelled raw dataset.
pub fn finer_level(
    raw: &LabeledDataset,
    assignments: &[ClusterAssignment],
) -> Result<(Hierarchy, FinerAssignment, LabeledDataset)> {
    let (h, fa) = add_finer_level(&Hierarchy::flat(raw.class_count()), raw.labels(), assignments)?;
    let relabelled = relabel_dataset(raw, &fa)?;
    Ok((h, fa, relabelled))
}

/// Splits `spe_view` (the dataset carrying specific-probe features).
pub fn run_splitter(
    spe_view: &LabeledDataset,
    choice: &SplitterChoice,
    master: u64,
) -> Result<(Vec<ClusterAssignment>, Option<BucbamOutput>)> {
    match choice {
        SplitterChoice::Bucbam(b) => {
            let mut b = *b;
            b.seed = derive_seed(master, &[tags::BUCBAM, b.seed]);
            let out = bucbam_split(spe_view, &b)?;
            Ok((out.assignments(), Some(out)))
        }
        other => {
            let method = other.baseline().expect("baseline");
            Ok((split_dataset(spe_view, &method, derive_seed(master, &[tags::SPLIT]))?, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSplitSummary {
    pub class_id: usize,
    pub k_initial: Option<usize>,
    pub k_pruned: Option<usize>,
    pub k_final: usize,
    pub prune_fallback: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub splitter: String,
    pub classes: Vec<ClassSplitSummary>,
    pub finer_class_count: usize,
    pub spenet: EvalReport,
    pub finet: EvalReport,
    pub spefinet: EvalReport,
    pub planted_ari: Option<PlantedAri>,
}

impl RunSummary {
    pub fn average_k(&self) -> f64 {
        self.classes.iter().map(|c| c.k_final as f64).sum::<f64>() / self.classes.len() as f64
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    version: &'static str,
    stages: &'a [(String, Vec<String>)],
}

struct RunDir {
    root: PathBuf,
    stages: Vec<(String, Vec<String>)>,
    timings: Vec<StageTiming>,
    clock: Instant,
}

impl RunDir {
    fn begin(&mut self, stage: &str) {
        log::info!("stage {stage}");
        self.stages.push((stage.to_string(), Vec::new()));
        self.clock = Instant::now();
    }

    fn end(&mut self) {
        let stage = self.stages.last().expect("stage begun").0.clone();
        self.timings.push(StageTiming { stage, seconds: self.clock.elapsed().as_secs_f64() });
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.stages.last_mut().expect("stage begun").1.push(name.to_string());
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            let _ = fs::create_dir_all(parent);
        }
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }
}

fn load_source(cfg: &PipelineConfig) -> Result<(LabeledDataset, Vec<TargetTask>, Option<PlantedTruth>)> {
    if let Some(paths) = &cfg.data {
        let d = load_dataset(&paths.features, &paths.labels)?;
        let tasks = load_tasks(&paths.tasks)?;
        return Ok((d, tasks, None));
    }
    let spec = cfg.synth.as_ref().expect("validated");
    let (d, truth) = generate_source(spec)?;
    let tasks = generate_targets(&truth, spec, &cfg.targets)?;
    Ok((d, tasks, Some(truth)))
}

/// Runs every stage, writing artifacts under `cfg.output_dir`. Stage
/// errors carry the stage name; artifacts written so far are kept.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut run = RunDir { root, stages: Vec::new(), timings: Vec::new(), clock: Instant::now() };
    let hash = cfg.hash();
    fs::write(run.root.join("config.toml"), cfg.to_toml_string()?).map_err(|e| Error::io(run.root.join("config.toml"), e))?;

    run.begin("source");
    let (raw, tasks, truth) = load_source(cfg).map_err(|e| e.in_stage("source"))?;
    if let Some(truth) = &truth {
        let stage = |e: Error| e.in_stage("source");
        save_features(raw.features(), run.path("data/source.finf")).map_err(stage)?;
        save_labels(raw.labels(), run.path("data/source_labels.csv")).map_err(stage)?;
        save_labels(&truth.subconcept, run.path("data/truth_subconcepts.csv")).map_err(stage)?;
        let manifest = save_tasks(&tasks, run.root.join("data")).map_err(stage)?;
        run.stages.last_mut().expect("stage").1.push(
            manifest.strip_prefix(&run.root).unwrap_or(&manifest).display().to_string(),
        );
    }
    run.end();

    let result = (|| -> Result<RunSummary> {
        run.begin("train-spe-probe");
        let spe_cfg = probe_seeded(&cfg.spe_probe, cfg.seed, tags::SPE_PROBE);
        let (spe, spe_hist) = train_spenet(&raw, &spe_cfg).map_err(|e| e.in_stage("train-spe-probe"))?;
        spe.save(run.path("spe_probe.bin"))?;
        run.json("spe_history.json", &spe_hist.epoch_losses)?;
        run.end();

        run.begin("extract-spe");
        let spe_feats = stored_features(&spe, raw.features()).map_err(|e| e.in_stage("extract-spe"))?;
        save_features(&spe_feats, run.path("spe_features.finf"))?;
        run.end();

        run.begin("split");
        let spe_view = raw.with_features(spe_feats.clone())?;
        let (assignments, bucbam) = run_splitter(&spe_view, &cfg.splitter, cfg.seed).map_err(|e| e.in_stage("split"))?;
        let classes: Vec<ClassSplitSummary> = match &bucbam {
            Some(out) => {
                for c in &out.classes {
                    save_features(
                        &c.matrix.to_feature_matrix(),
                        run.path(&format!("bucbam/matrix_class_{}.finf", c.class_id())),
                    )?;
                }
                let plans: Vec<_> = out.classes.iter().map(|c| &c.plan).collect();
                run.json("bucbam/merge_plans.json", &plans)?;
                out.classes
                    .iter()
                    .map(|c| ClassSplitSummary {
                        class_id: c.class_id(),
                        k_initial: Some(c.initial.k),
                        k_pruned: Some(c.pruned.assignment.k),
                        k_final: c.plan.k_merged,
                        prune_fallback: Some(c.pruned.fallback),
                    })
                    .collect()
            }
            None => assignments
                .iter()
                .map(|a| ClassSplitSummary { class_id: a.class_id, k_initial: None, k_pruned: None, k_final: a.k, prune_fallback: None })
                .collect(),
        };
        run.json("split_report.json", &classes)?;
        run.end();

        run.begin("finer-level");
        let (hierarchy, fa, fine_ds) = finer_level(&raw, &assignments).map_err(|e| e.in_stage("finer-level"))?;
        hierarchy.save(run.path("hierarchy.json"))?;
        fa.save_csv(run.path("finer_assignment.csv"))?;
        run.end();

        run.begin("train-fine-probe");
        let fine_cfg = probe_seeded(&cfg.fine_probe, cfg.seed, tags::FINE_PROBE);
        let (fine, fine_hist) = train_probe(&fine_ds, fine_cfg.hidden_dim, &fine_cfg.train).map_err(|e| e.in_stage("train-fine-probe"))?;
        fine.save(run.path("fine_probe.bin"))?;
        run.json("fine_history.json", &fine_hist.epoch_losses)?;
        run.end();

        run.begin("extract-fine");
        let fine_feats = stored_features(&fine, raw.features()).map_err(|e| e.in_stage("extract-fine"))?;
        save_features(&fine_feats, run.path("fine_features.finf"))?;
        run.end();

        run.begin("fuse");
        let fused = fuse(&spe_feats, &fine_feats).map_err(|e| e.in_stage("fuse"))?;
        save_features(&fused.matrix, run.path("spefine_features.finf"))?;
        run.end();

        run.begin("evaluate");
        let splitter = cfg.splitter.name();
        let eval = |r: &Representation, s: Option<String>| {
            evaluate_representation(r, &tasks, &cfg.eval, s).map_err(|e| e.in_stage("evaluate"))
        };
        let spenet = eval(&Representation::Spe(spe.clone()), None)?;
        let finet = eval(&Representation::Fine(fine.clone()), Some(splitter.clone()))?;
        let spefinet = eval(&Representation::SpeFine { spe, fine }, Some(splitter.clone()))?;
        run.json("report_spenet.json", &spenet)?;
        run.json("report_finet.json", &finet)?;
        run.json("report_spefinet.json", &spefinet)?;
        run.end();

        run.begin("stats");
        let st = compute_cluster_stats(&assignments, &spe_feats, &cfg.stats).map_err(|e| e.in_stage("stats"))?;
        let pcas = class_pcas(&assignments, &spe_feats);
        for p in export_stats(&st, &pcas, run.root.join("stats")).map_err(|e| e.in_stage("stats"))? {
            let rel = p.strip_prefix(&run.root).unwrap_or(&p).display().to_string();
            run.stages.last_mut().expect("stage").1.push(rel);
        }
        run.end();

        let planted = match &truth {
            Some(t) => Some(planted_ari(&fa, t)?),
            None => None,
        };
        Ok(RunSummary {
            config_hash: hash.clone(),
            splitter,
            classes,
            finer_class_count: fa.finer_class_count,
            spenet,
            finet,
            spefinet,
            planted_ari: planted,
        })
    })();

    let summary = result?;
    run.text("summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let manifest = Manifest { config_hash: hash, version: env!("CARGO_PKG_VERSION"), stages: &run.stages };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(run.root.join("manifest.json"), text).map_err(|e| Error::io(run.root.join("manifest.json"), e))?;
    let timings = serde_json::to_string_pretty(&run.timings)? + "\n";
    fs::write(run.root.join("timings.json"), timings).map_err(|e| Error::io(run.root.join("timings.json"), e))?;
    Ok(summary)
}
