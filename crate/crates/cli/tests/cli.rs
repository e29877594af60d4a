use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use churnforge::data::WindowDataset;

fn churnforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_churnforge")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).map(|rd| rd.map(|e| e.unwrap().path()).collect()).unwrap_or_default();
    v.sort();
    v
}

struct Run {
    _root: tempfile::TempDir,
    features: PathBuf,
    model: PathBuf,
}

/// synth → features → train on a small population, shared by the tests below.
fn pipeline(root: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let (syn, feat, model) = (root.join("synth"), root.join("features"), root.join("model"));
    ok(&churnforge(&["synth", "--users", "300", "--seed", seed, "--out", p(&syn)]));
    ok(&churnforge(&["features", "--data", p(&syn), "--seed", seed, "--out", p(&feat)]));
    ok(&churnforge(&[
        "train",
        "--data",
        p(&feat),
        "--model",
        "transformer",
        "--preset",
        "desk",
        "--epochs",
        "2",
        "--batch",
        "64",
        "--seed",
        seed,
        "--out",
        p(&model),
    ]));
    (feat, model)
}

fn shared() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let (features, model) = pipeline(root.path(), "3");
        Run { _root: root, features, model }
    })
}

#[test]
fn gradcheck_of_the_operations_passes() {
    let out = churnforge(&["gradcheck", "--ops-only"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("gradcheck:") && text.contains("passed"), "{}", text);
    assert!(!text.contains("FAIL"));
}

#[test]
fn training_writes_checkpoints_and_history() {
    let run = shared();
    for name in ["model.ckpt", "best.ckpt", "history.csv", "normalization.json", "run_config.json"] {
        assert!(run.model.join(name).is_file(), "{} missing", name);
    }
    let history = std::fs::read_to_string(run.model.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,auc_w1,auc_w2,auc_w3,auc_w4");
    assert_eq!(lines.len(), 3);
    for name in ["train.bin", "validation.bin", "test.bin", "level01.csv", "normalization.json", "schema.json"] {
        assert!(run.features.join(name).is_file(), "{} missing", name);
    }
}

#[test]
fn missing_data_flag_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = churnforge(&["train", "--model", "transformer", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(!out_dir.exists());
    assert!(files_under(dir.path()).is_empty());
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(churnforge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(churnforge(&["gradcheck", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(churnforge(&[]).status.code(), Some(2));
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = shared();
    let o = dir.path().join("x");
    assert_eq!(churnforge(&["train", "--data", p(&run.features), "--model", "perceptron", "--out", p(&o)]).status.code(), Some(2));
    assert_eq!(churnforge(&["train", "--data", p(&run.features), "--loss", "hinge", "--out", p(&o)]).status.code(), Some(2));
    assert_eq!(churnforge(&["train", "--data", p(&run.features), "--epochs", "101", "--out", p(&o)]).status.code(), Some(2));
    assert_eq!(churnforge(&["synth", "--workers", "0", "--out", p(&o)]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"sede": 1}"#).unwrap();
    assert_eq!(churnforge(&["synth", "--config", p(&cfg), "--out", p(&o)]).status.code(), Some(2));
    assert!(!o.exists());
}

#[test]
fn predictions_are_probabilities_and_deterministic() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        ok(&churnforge(&["predict", "--model", p(&run.model.join("model.ckpt")), "--data", p(&run.features), "--out", p(o)]));
    }
    let text = std::fs::read_to_string(a.join("predictions.csv")).unwrap();
    assert_eq!(text, std::fs::read_to_string(b.join("predictions.csv")).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("user_id,anchor_date,p_w1,p_w2,p_w3,p_w4"));
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6);
        for c in &cells[2..] {
            let v: f64 = c.parse().unwrap();
            assert!(v > 0.0 && v < 1.0, "{}", v);
        }
        rows += 1;
    }
    let test = WindowDataset::load(&run.features.join("test.bin")).unwrap();
    assert_eq!(rows, test.len());
}

#[test]
fn empty_dataset_gives_header_only_predictions() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.bin");
    WindowDataset::new(30, 11, Vec::new()).unwrap().save(&empty).unwrap();
    let o = dir.path().join("o");
    ok(&churnforge(&["predict", "--model", p(&run.model.join("model.ckpt")), "--data", p(&empty), "--out", p(&o)]));
    assert_eq!(std::fs::read_to_string(o.join("predictions.csv")).unwrap(), "user_id,anchor_date,p_w1,p_w2,p_w3,p_w4\n");
}

#[test]
fn shape_and_stats_mismatches_exit_2() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let narrow = dir.path().join("narrow.bin");
    WindowDataset::new(30, 10, Vec::new()).unwrap().save(&narrow).unwrap();
    let o = dir.path().join("o");
    let model = run.model.join("model.ckpt");
    let out = churnforge(&["predict", "--model", p(&model), "--data", p(&narrow), "--out", p(&o)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let lonely = dir.path().join("lonely");
    std::fs::create_dir_all(&lonely).unwrap();
    std::fs::copy(&model, lonely.join("model.ckpt")).unwrap();
    let out = churnforge(&["predict", "--model", p(&lonely.join("model.ckpt")), "--data", p(&run.features), "--out", p(&o)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!o.exists());
}

#[test]
fn evaluate_and_report_write_curves_and_plots() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("eval");
    ok(&churnforge(&["evaluate", "--model", p(&run.model.join("best.ckpt")), "--data", p(&run.features), "--out", p(&o)]));
    assert!(o.join("report.json").is_file());
    assert!(o.join("roc_w1.csv").is_file() && o.join("pr_w1.csv").is_file());
    ok(&churnforge(&["report", "--data", p(&o)]));
    assert!(files_under(&o).iter().any(|f| f.extension().is_some_and(|e| e == "svg")));
}

#[test]
fn classical_models_train_and_score() {
    let run = shared();
    let dir = tempfile::tempdir().unwrap();
    let (m, e) = (dir.path().join("lr"), dir.path().join("eval"));
    ok(&churnforge(&["train", "--data", p(&run.features), "--model", "lr", "--out", p(&m)]));
    assert!(m.join("model.json").is_file());
    ok(&churnforge(&["evaluate", "--model", p(&m.join("model.json")), "--data", p(&run.features), "--out", p(&e)]));
    assert!(e.join("report.json").is_file());
}

#[test]
fn same_seed_pipeline_reproduces_reports_byte_for_byte() {
    let root = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for tag in ["one", "two"] {
        let base = root.path().join(tag);
        let (feat, model) = pipeline(&base, "21");
        let eval = base.join("eval");
        ok(&churnforge(&["evaluate", "--model", p(&model.join("model.ckpt")), "--data", p(&feat), "--out", p(&eval)]));
        reports.push(eval);
    }
    let (a, b) = (files_under(&reports[0]), files_under(&reports[1]));
    assert_eq!(a.len(), b.len());
    assert!(a.len() > 1);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{:?} differs", x.file_name());
    }
}
