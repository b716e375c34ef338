use std::path::Path;
use std::process::{Command, Output};

fn refinery(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refinery"))
        .args(args)
        .current_dir(dir)
        .env("REFINERY_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = refinery(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(dir, &["synth", "--classes", "4", "--subconcepts", "2", "--per", "40", "--dim", "8", "--seed", "1", "--out-dir", "d"]);
}

#[test]
fn module_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for f in ["source.finf", "source_labels.csv", "truth_subconcepts.csv", "tasks.json"] {
        assert!(dir.join("d").join(f).exists(), "{f}");
    }
    let (feats, labels) = ("d/source.finf", "d/source_labels.csv");
    let out = ok(dir, &["train-probe", "--features", feats, "--labels", labels, "--hidden", "16", "--epochs", "30", "--out", "spe.bin", "--history", "h.json"]);
    assert!(out.contains("fingerprint"));
    let history: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("h.json")).unwrap()).unwrap();
    assert_eq!(history["epoch_losses"].as_array().unwrap().len(), 30);

    ok(dir, &["extract", "--model", "spe.bin", "--features", feats, "--out", "spe.finf"]);
    ok(dir, &["split", "--method", "kmeans", "--k", "3", "--features", "spe.finf", "--labels", labels, "--out", "a.csv"]);
    let csv = std::fs::read_to_string(dir.join("a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 320);

    ok(dir, &["bucbam", "--features", feats, "--labels", labels, "--spe-model", "spe.bin", "--k", "8", "--mode", "as", "--out-dir", "bb"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("bb/report.json")).unwrap()).unwrap();
    assert_eq!(report["classes"].as_array().unwrap().len(), 4);
    assert_eq!(report["parameters"]["k_initial"], 8);
    assert!(dir.join("bb/matrix_class_3.finf").exists() && dir.join("bb/merge_plans.json").exists());

    ok(dir, &["train-probe", "--features", feats, "--labels", labels, "--hidden", "16", "--epochs", "5", "--seed", "2", "--out", "fine.bin"]);
    ok(dir, &["extract", "--model", "fine.bin", "--features", feats, "--out", "fine.finf"]);
    assert!(ok(dir, &["fuse", "--spe", "spe.finf", "--fine", "fine.finf", "--out", "fused.finf"]).contains("16 + 16"));

    let out = ok(dir, &["eval", "--repr", "spefine", "--spe-model", "spe.bin", "--fine-model", "fine.bin", "--tasks", "d/tasks.json", "--out", "r.json"]);
    assert!(out.contains("average"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(r["representation"], "SpeFiNet");
    assert_eq!(r["tasks"].as_array().unwrap().len(), 3);

    ok(dir, &["stats", "--assignments", "bb/assignments.csv", "--features", "spe.finf", "--out-dir", "st"]);
    assert!(dir.join("st/sizes.csv").exists() && dir.join("st/variance_hist.csv").exists());

    let csv = ok(dir, &["sweep", "--features", feats, "--labels", labels, "--tasks", "d/tasks.json", "--ks", "1,2", "--out", "sweep.csv"]);
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn pipeline_with_overrides_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.toml"), "seed = 5\n[synth]\nn_classes = 3\nsubconcepts_per_class = 2\nsamples_per_subconcept = 30\ndim = 6\n").unwrap();
    let args = ["pipeline", "--config", "c.toml", "--set", "splitter.k_initial=8", "--out-dir", "run"];
    let first = ok(dir, &args);
    let summary = std::fs::read(dir.join("run/summary.json")).unwrap();
    let second = ok(dir, &args);
    assert_eq!(first, second);
    assert_eq!(std::fs::read(dir.join("run/summary.json")).unwrap(), summary);
    let cfg = std::fs::read_to_string(dir.join("run/config.toml")).unwrap();
    assert!(cfg.contains("seed = 5") && cfg.contains("k_initial = 8"), "{cfg}");

    let printed = ok(dir, &["pipeline", "--config", "c.toml", "--seed", "9", "--print-config"]);
    assert!(printed.starts_with("seed = 9"));
}

#[test]
fn exit_codes_separate_config_from_stage_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let code = |args: &[&str]| refinery(dir, args).status.code();

    assert_eq!(code(&["split", "--method", "kmeans", "--features", "d/source.finf", "--labels", "d/source_labels.csv", "--out", "a.csv"]), Some(2));
    assert_eq!(code(&["pipeline", "--set", "unknown_key=1"]), Some(2));
    assert_eq!(code(&["pipeline", "--config", "missing.toml"]), Some(2));
    assert_eq!(code(&["eval", "--repr", "fine", "--tasks", "d/tasks.json", "--out", "r.json"]), Some(2));
    assert_eq!(code(&["not-a-command"]), Some(2));

    assert_eq!(code(&["extract", "--model", "missing.bin", "--features", "d/source.finf", "--out", "x.finf"]), Some(3));
    std::fs::write(dir.join("bad.csv"), "sample,label\n0,0\n").unwrap();
    assert_eq!(code(&["train-probe", "--features", "d/source.finf", "--labels", "bad.csv", "--out", "m.bin"]), Some(3));
    std::fs::write(dir.join("data.toml"), "[data]\nfeatures = \"nope.finf\"\nlabels = \"nope.csv\"\ntasks = \"nope.json\"\n").unwrap();
    let out = refinery(dir, &["pipeline", "--config", "data.toml", "--out-dir", "r2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `source`"));

    let out = Command::new(env!("CARGO_BIN_EXE_refinery"))
        .args(["synth", "--out-dir", "z"])
        .current_dir(dir)
        .env("REFINERY_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
