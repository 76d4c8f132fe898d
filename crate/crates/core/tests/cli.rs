use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn nodenas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodenas")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn motif_spec(count: usize) -> Value {
    json!({
        "name": "motif",
        "train": {"family": {"kind": "spurious_motif", "bias": 0.9, "split": "train"}, "seed": 1, "count": count},
        "test": {"family": {"kind": "spurious_motif", "bias": 0.9, "split": "test"}, "seed": 2, "count": 12}
    })
}

fn experiment(train_path: &str) -> Value {
    json!({
        "train": {
            "task": {"kind": "graph_classification", "num_classes": 3},
            "model": {"input_dim": 12, "embed_dim": 8, "mapped_dim": 8, "output_dim": 3, "layers": 2},
            "epochs": 3,
            "batch_size": 4
        },
        "train_data": {"name": "motif", "path": train_path, "split": "train"},
        "eval_data": [{"name": "motif", "path": "data/motif"}],
        "out_dir": "run"
    })
}

fn gen_motif(dir: &Path, count: usize) {
    write_json(&dir.join("spec.json"), &motif_spec(count));
    let o = nodenas(dir, &["gen", "--config", "spec.json", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("spec.json"), &motif_spec(30));
    for out in ["a", "b"] {
        let o = nodenas(dir.path(), &["gen", "--config", "spec.json", "--out", out, "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["train.jsonl", "test.jsonl", "spec.json"] {
        let a = fs::read(dir.path().join("a/motif").join(file)).unwrap();
        let b = fs::read(dir.path().join("b/motif").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn gen_writes_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    gen_motif(dir.path(), 1000);
    let text = fs::read_to_string(dir.path().join("data/motif/train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1000);
}

#[test]
fn gen_rejects_odd_regular_degree_sum() {
    let dir = tempfile::tempdir().unwrap();
    write_json(
        &dir.path().join("rr.json"),
        &json!({"name": "rr", "train": {"family": {"kind": "rr", "n": 7, "d": 3}, "seed": 0}}),
    );
    let o = nodenas(dir.path(), &["gen", "--config", "rr.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n*d must be even"), "{}", stderr(&o));
}

#[test]
fn train_with_missing_dataset_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("exp.json"), &experiment("missing/dir"));
    let o = nodenas(dir.path(), &["train", "--config", "exp.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing/dir"), "{}", stderr(&o));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn train_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    gen_motif(dir.path(), 8);
    let mut exp = experiment("data/motif");
    exp["train"]["learning_rat"] = json!(0.1);
    write_json(&dir.path().join("exp.json"), &exp);
    let o = nodenas(dir.path(), &["train", "--config", "exp.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn train_eval_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_motif(d, 24);
    write_json(&d.join("exp.json"), &experiment("data/motif"));
    let o = nodenas(d, &["train", "--config", "exp.json", "--mode", "graph_level_nas", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "metrics.csv", "checkpoint.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "graph_level_nas");
    assert_eq!(report["config"]["model"]["mode"], "graph_level_nas");
    assert_eq!(report["seed"], 3);

    // eval on the train split reproduces the final in-training evaluation
    let o = nodenas(d, &["eval", "--checkpoint", "run/checkpoint.json", "--data", "data/motif/train.jsonl", "--out", "ev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(d.join("ev/metrics.csv")).unwrap();
    let rows: Vec<nodenas::trainer::MetricRow> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let last = report["epochs"].as_array().unwrap().len();
    for metric in ["accuracy", "loss"] {
        let evaluated = rows.iter().find(|r| r.metric == metric).unwrap().value;
        let trained = report["metrics"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["dataset"] == "train" && r["metric"] == metric && r["epoch"] == last)
            .unwrap()["value"]
            .as_f64()
            .unwrap();
        assert_eq!(evaluated.to_bits(), trained.to_bits(), "{metric}");
    }

    let o = nodenas(d, &["explain", "--checkpoint", "run/checkpoint.json", "--data", "data/motif", "--out", "ex"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(d.join("ex/preferences.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "degree_group,gcn,gin,sage_mean,graphconv,linear");
    assert_eq!(lines.len(), 6);
    for line in &lines[1..] {
        let cells: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 5);
        assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn eval_with_wrong_feature_dim_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_motif(d, 8);
    write_json(&d.join("exp.json"), &experiment("data/motif"));
    assert!(nodenas(d, &["train", "--config", "exp.json", "--epochs", "1"]).status.success());
    let mut wide = motif_spec(4);
    wide["name"] = json!("wide");
    wide["train"]["random_features"] = json!(3);
    write_json(&d.join("wide.json"), &wide);
    assert!(nodenas(d, &["gen", "--config", "wide.json", "--out", "data"]).status.success());
    let o = nodenas(d, &["eval", "--checkpoint", "run/checkpoint.json", "--data", "data/wide/train.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("feature dimension 15, model expects 12"), "{}", stderr(&o));
}

#[test]
fn diverging_run_exits_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_motif(d, 8);
    let mut exp = experiment("data/motif");
    exp["train"]["optimizer"] = json!({"learning_rate": 1e300});
    exp["train"]["epochs"] = json!(20);
    write_json(&d.join("exp.json"), &exp);
    let o = nodenas(d, &["train", "--config", "exp.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss"), "{}", stderr(&o));
}
