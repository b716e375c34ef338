use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use refinery::bucbam::{bucbam_split, BucbamConfig, MergeMode};
use refinery::data::{load_dataset, load_features, save_features, save_labels};
use refinery::eval::{default_probe, evaluate_representation, k_sweep, load_tasks, save_tasks, sweep_csv, Representation, SweepConfig};
use refinery::fusion::fuse;
use refinery::hierarchy::{add_finer_level, FinerAssignment, Hierarchy};
use refinery::linear::{LinearConfig, LossKind};
use refinery::pipeline::{run_pipeline, stored_features, PipelineConfig};
use refinery::probe::{train_probe, ProbeModel, TrainConfig};
use refinery::splitters::{split_dataset, AffinityParams, SplitMethod};
use refinery::stats::{class_pcas, compute_cluster_stats, export_stats, StatsConfig};
use refinery::synth::{generate_source, generate_targets, SynthSpec, TargetSpec};
use refinery::Error;

#[derive(Parser)]
#[command(name = "refinery", version, about = "Refine classes into finer sub-classes and evaluate transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-subconcept source dataset and its target tasks.
    Synth(SynthArgs),
    /// Train a one-hidden-layer probe on features and labels.
    TrainProbe(TrainProbeArgs),
    /// Write the hidden-layer activations of a probe.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split every class with a baseline method.
    Split(SplitArgs),
    /// Split every class with bottom-up clustering-based merging.
    Bucbam(BucbamArgs),
    /// L-infinity normalise two representations and concatenate them.
    Fuse {
        #[arg(long)]
        spe: PathBuf,
        #[arg(long)]
        fine: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a representation on target tasks with linear probes.
    Eval(EvalArgs),
    /// Cluster size and variance histograms plus per-class PCA.
    Stats {
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        size_bin: f64,
        #[arg(long, default_value_t = 0.05)]
        variance_bin: f64,
    },
    /// Transfer scores as a function of K for a fixed-K splitter.
    Sweep(SweepArgs),
    /// Run every stage from a TOML config.
    Pipeline(PipelineArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    subconcepts: usize,
    #[arg(long, default_value_t = 60)]
    per: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    std: f64,
    #[arg(long, default_value_t = 6.0)]
    sep: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    train_per: usize,
    #[arg(long, default_value_t = 20)]
    test_per: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct TrainProbeArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch mean losses as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Random,
    Kmeans,
    Spectral,
    Affinity,
    Meanshift,
}

#[derive(clap::Args)]
struct SplitArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ss,
    As,
}

#[derive(clap::Args)]
struct BucbamArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Split the hidden activations of this probe instead of the raw features.
    #[arg(long)]
    spe_model: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    k: usize,
    #[arg(long, default_value_t = 15)]
    min_size: usize,
    #[arg(long, default_value_t = 0.8)]
    s_high: f64,
    #[arg(long)]
    s_med: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Ss)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Repr {
    Identity,
    Spe,
    Fine,
    Spefine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Hinge,
    Logistic,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    repr: Repr,
    #[arg(long)]
    spe_model: Option<PathBuf>,
    #[arg(long)]
    fine_model: Option<PathBuf>,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_enum, default_value_t = Loss::Hinge)]
    loss: Loss,
    /// Recorded in the report.
    #[arg(long)]
    splitter: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    ks: Vec<usize>,
    #[arg(long, default_value = "kmeans")]
    method: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PipelineArgs {
    /// TOML config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set splitter.k_initial=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_classes: a.classes,
        subconcepts_per_class: a.subconcepts,
        samples_per_subconcept: a.per,
        dim: a.dim,
        within_std: a.std,
        separation: a.sep,
        seed: a.seed,
    };
    let targets = TargetSpec { train_per_subconcept: a.train_per, test_per_subconcept: a.test_per, ..TargetSpec::default() };
    let (d, truth) = generate_source(&spec)?;
    let tasks = generate_targets(&truth, &spec, &targets)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    save_features(d.features(), a.out_dir.join("source.finf"))?;
    save_labels(d.labels(), a.out_dir.join("source_labels.csv"))?;
    save_labels(&truth.subconcept, a.out_dir.join("truth_subconcepts.csv"))?;
    let manifest = save_tasks(&tasks, &a.out_dir)?;
    println!("{} samples, {} classes, {} tasks -> {}", d.n_samples(), d.class_count(), tasks.len(), manifest.display());
    Ok(())
}

fn train(a: TrainProbeArgs) -> Result<()> {
    let d = load_dataset(&a.features, &a.labels)?;
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        momentum: a.momentum.unwrap_or(base.momentum),
        weight_decay: a.weight_decay.unwrap_or(base.weight_decay),
        seed: a.seed,
    };
    let (model, history) = train_probe(&d, a.hidden, &cfg)?;
    model.save(&a.out)?;
    if let Some(p) = &a.history {
        write_json(p, &json!({ "initial_loss": history.initial_loss, "epoch_losses": history.epoch_losses }))?;
    }
    println!("loss {:.6} -> {:.6}; fingerprint {}", history.initial_loss, history.final_loss(), model.fingerprint());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let need_k = || a.k.ok_or_else(|| Error::Config("--k is required for this method".into()));
    let method = match a.method {
        Method::Random => SplitMethod::Random { k: need_k()? },
        Method::Kmeans => SplitMethod::Kmeans { k: need_k()? },
        Method::Spectral => SplitMethod::Spectral { k: need_k()? },
        Method::Affinity => SplitMethod::Affinity(AffinityParams::default()),
        Method::Meanshift => SplitMethod::Meanshift {
            bandwidth: a.bandwidth.ok_or_else(|| Error::Config("--bandwidth is required for meanshift".into()))?,
        },
    };
    let d = load_dataset(&a.features, &a.labels)?;
    let assignments = split_dataset(&d, &method, a.seed)?;
    let (_, fa) = add_finer_level(&Hierarchy::flat(d.class_count()), d.labels(), &assignments)?;
    fa.save_csv(&a.out)?;
    println!("{}: {} finer classes", method.name(), fa.finer_class_count);
    Ok(())
}

fn bucbam(a: BucbamArgs) -> Result<()> {
    let raw = load_dataset(&a.features, &a.labels)?;
    let d = match &a.spe_model {
        Some(p) => raw.with_features(stored_features(&ProbeModel::load(p)?, raw.features())?)?,
        None => raw,
    };
    let cfg = BucbamConfig {
        k_initial: a.k,
        min_cluster_size: a.min_size,
        s_high: a.s_high,
        s_med: a.s_med,
        merge_mode: match a.mode {
            Mode::Ss => MergeMode::Ss,
            Mode::As => MergeMode::As,
        },
        seed: a.seed,
        ..BucbamConfig::default()
    };
    let start = Instant::now();
    let out = bucbam_split(&d, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let (_, fa) = add_finer_level(&Hierarchy::flat(d.class_count()), d.labels(), &out.assignments())?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    fa.save_csv(a.out_dir.join("assignments.csv"))?;
    for c in &out.classes {
        save_features(&c.matrix.to_feature_matrix(), a.out_dir.join(format!("matrix_class_{}.finf", c.class_id())))?;
    }
    let plans: Vec<_> = out.classes.iter().map(|c| &c.plan).collect();
    write_json(&a.out_dir.join("merge_plans.json"), &serde_json::to_value(plans)?)?;
    let classes: Vec<_> = out
        .classes
        .iter()
        .map(|c| json!({ "class_id": c.class_id(), "k_pruned": c.pruned.assignment.k, "k_merged": c.plan.k_merged, "prune_fallback": c.pruned.fallback }))
        .collect();
    write_json(
        &a.out_dir.join("report.json"),
        &json!({ "parameters": cfg, "s_med": cfg.s_med(), "classes": classes, "finer_class_count": fa.finer_class_count, "seconds": seconds }),
    )?;
    println!("K^M per class {:?}; {} finer classes", out.merged_counts(), fa.finer_class_count);
    Ok(())
}

fn load_model(path: &Option<PathBuf>, flag: &str) -> Result<ProbeModel> {
    let p = path.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required for this representation")))?;
    Ok(ProbeModel::load(p)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let repr = match a.repr {
        Repr::Identity => Representation::Identity,
        Repr::Spe => Representation::Spe(load_model(&a.spe_model, "spe-model")?),
        Repr::Fine => Representation::Fine(load_model(&a.fine_model, "fine-model")?),
        Repr::Spefine => Representation::SpeFine {
            spe: load_model(&a.spe_model, "spe-model")?,
            fine: load_model(&a.fine_model, "fine-model")?,
        },
    };
    let probe = match a.loss {
        Loss::Hinge => default_probe(),
        Loss::Logistic => LinearConfig { loss: LossKind::Logistic, ..default_probe() },
    };
    let tasks = load_tasks(&a.tasks)?;
    let report = evaluate_representation(&repr, &tasks, &probe, a.splitter)?;
    write_json(&a.out, &serde_json::to_value(&report)?)?;
    for t in &report.tasks {
        println!("{:<24} {:.4}", t.name, t.score);
    }
    println!("{:<24} {:.4}", "average", report.average);
    Ok(())
}

fn stats(assignments: &Path, features: &Path, out_dir: &Path, cfg: StatsConfig) -> Result<()> {
    let fa = FinerAssignment::load_csv(assignments)?;
    let f = load_features(features)?;
    let a = fa.to_cluster_assignments()?;
    let st = compute_cluster_stats(&a, &f, &cfg)?;
    let written = export_stats(&st, &class_pcas(&a, &f), out_dir)?;
    println!("{} clusters over {} classes; {} files in {}", st.clusters.len(), st.per_class_k.len(), written.len(), out_dir.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let d = load_dataset(&a.features, &a.labels)?;
    let tasks = load_tasks(&a.tasks)?;
    let cfg = SweepConfig { ks: a.ks, method: a.method, seed: a.seed, ..SweepConfig::default() };
    let rows = k_sweep(&d, &tasks, &cfg)?;
    let csv = sweep_csv(&rows);
    fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{csv}");
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = a.overrides;
    if let Some(dir) = &a.out_dir {
        overrides.push(format!("output_dir={:?}", dir.display().to_string()));
    }
    if let Some(seed) = a.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = PipelineConfig::from_toml_with_overrides(&text, &overrides)?;
    cfg.validate()?;
    if a.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let s = run_pipeline(&cfg)?;
    println!("splitter {}; {} finer classes; config {}", s.splitter, s.finer_class_count, &s.config_hash[..12]);
    for r in [&s.spenet, &s.finet, &s.spefinet] {
        println!("{:<10} average {:.4}", r.representation, r.average);
    }
    if let Some(p) = &s.planted_ari {
        println!("planted ARI {:.4}", p.global);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainProbe(a) => train(a),
        Command::Extract { model, features, out } => {
            let m = ProbeModel::load(&model)?;
            let f = stored_features(&m, &load_features(&features)?)?;
            save_features(&f, &out)?;
            println!("{} × {} -> {}", f.n_samples(), f.dim(), out.display());
            Ok(())
        }
        Command::Split(a) => split(a),
        Command::Bucbam(a) => bucbam(a),
        Command::Fuse { spe, fine, out } => {
            let fused = fuse(&load_features(&spe)?, &load_features(&fine)?)?;
            save_features(&fused.matrix, &out)?;
            println!("{} + {} dims -> {}", fused.spe_dim, fused.fine_dim, out.display());
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Stats { assignments, features, out_dir, size_bin, variance_bin } => {
            stats(&assignments, &features, &out_dir, StatsConfig { size_bin, variance_bin })
        }
        Command::Sweep(a) => sweep(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

/// 2 for configuration problems, 3 for everything that failed while running.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 3,
    }
}

/// The error chain, skipping causes whose text a parent already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("REFINERY_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("REFINERY_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("building the worker pool")?;
    log::debug!("worker pool capped at {n} threads");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
