//! End-to-end runs of the `submatch` binary in scratch directories.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use submatch::dataset_io::read_samples;
use submatch::graph::{FeatureEncoding, Graph, Sample};
use submatch::model::{Activation, Checkpoint, ModelConfig, ModelParams};
use submatch::train::evaluate_loss;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_submatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_json(dir: &Path, name: &str, value: &Value) {
    fs::write(dir.join(name), serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn dataset1_config() -> Value {
    json!({
        "dataset": "dataset1",
        "generator": { "edge_prob": 0.2, "max_label": 10, "seed": 7 },
        "sizes": { "data": 6, "query": 3 },
        "counts": { "train": 200, "valid": 200, "test": 200 }
    })
}

fn smoke_config() -> Value {
    json!({
        "dataset": "dataset2",
        "generator": { "edge_prob": 0.3, "max_label": 5, "seed": 3 },
        "sizes": { "data": 5, "query": 2 },
        "counts": { "train": 10, "valid": 4, "test": 4 },
        "model": {
            "num_layers": 2,
            "layer_dims": [1, 6, 6],
            "layer_activations": ["elu", "row_softmax"],
            "ntn_k": 2,
            "seed": 1
        },
        "train": { "batch_size": 4, "iterations": 50, "validation_every": 10, "seed": 2 },
        "paths": { "report": "report.json" }
    })
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_writes_600_samples_reproducibly() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        write_json(dir, "exp.json", &dataset1_config());
        let out = run(dir, &["gen", "--config", "exp.json"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let total: usize = ["train.jsonl", "valid.jsonl", "test.jsonl"]
        .iter()
        .map(|f| line_count(&a.path().join("data").join(f)))
        .sum();
    assert_eq!(total, 600);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"] {
        let x = fs::read(a.path().join("data").join(f)).unwrap();
        let y = fs::read(b.path().join("data").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn gen_rejects_oversized_query_without_writing() {
    let dir = TempDir::new().unwrap();
    let mut cfg = dataset1_config();
    cfg["sizes"] = json!({ "data": 3, "query": 4 });
    write_json(dir.path(), "exp.json", &cfg);
    let out = run(dir.path(), &["gen", "--config", "exp.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn missing_config_is_an_invalid_argument() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["gen", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_deterministically() {
    let runs: Vec<TempDir> = (0..2).map(|_| TempDir::new().unwrap()).collect();
    for dir in &runs {
        let dir = dir.path();
        write_json(dir, "exp.json", &smoke_config());
        assert!(run(dir, &["gen", "--config", "exp.json"]).status.success());
        let out = run(dir, &["train", "--config", "exp.json", "--quiet"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("best validation loss"));
    }
    let (a, b) = (runs[0].path(), runs[1].path());
    let history = fs::read_to_string(a.join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("iteration,train_loss,valid_loss"));
    assert_eq!(history.lines().count(), 51);
    assert_eq!(history, fs::read_to_string(b.join("history.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(b.join("checkpoint.json")).unwrap());

    let ckpt = Checkpoint::load(&a.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.experiment.as_ref(), Some(&smoke_config()));
    let valid = read_samples(&a.join("data").join("valid.jsonl")).unwrap();
    let recomputed = evaluate_loss(&valid, &ckpt.params, &ckpt.config).unwrap();
    assert_eq!(Some(recomputed), ckpt.validation_loss);

    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"], smoke_config());
    assert_eq!(report["num_samples"], 4);
}

#[test]
fn train_without_dataset_fails() {
    let dir = TempDir::new().unwrap();
    write_json(dir.path(), "exp.json", &smoke_config());
    let out = run(dir.path(), &["train", "--config", "exp.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("checkpoint.json").exists());
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        layer_dims: vec![1, 3],
        layer_activations: vec![Activation::Elu],
        ntn_k: 2,
        seed: 0,
    }
}

/// A zero head makes every output row uniform, so argmax picks column 0.
fn fixture_checkpoint(path: &Path) {
    let config = tiny_config();
    let mut params = ModelParams::init(&config).unwrap();
    params.head_w = submatch::autodiff::Tensor::zeros(params.head_w.shape());
    let ckpt = Checkpoint {
        seed: config.seed,
        config,
        params,
        iteration: 0,
        validation_loss: None,
        experiment: None,
    };
    ckpt.save(path).unwrap();
}

fn scalar_graph(n: usize, edges: Vec<(usize, usize)>, labels: Vec<u32>) -> Graph {
    Graph::from_labels(n, edges, labels, FeatureEncoding::Scalar, 10).unwrap()
}

fn fixture_samples(path: &Path) {
    let lines: Vec<String> = (0..4u32)
        .map(|i| {
            let q = scalar_graph(2, vec![(0, 1)], vec![2, 5]);
            let g = scalar_graph(4, vec![(0, 1), (2, 3)], vec![2, 5, 1 + i, 9]);
            serde_json::to_string(&Sample::new(q, g, vec![0, 1]).unwrap()).unwrap()
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn eval_fixture_scores_and_flag_scoping() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fixture_checkpoint(&d.join("ckpt.json"));
    fixture_samples(&d.join("fixture.jsonl"));

    let out = run(d, &["eval", "--checkpoint", "ckpt.json", "--dataset", "fixture.jsonl", "--report", "plain.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Prediction {0,0}: image {0} against truth image {0,1} leaves 3 of 4 nodes right.
    assert!(stdout(&out).contains("accuracy 0.750000"));
    assert!(stdout(&out).contains("f1 0.500000"));
    assert!(stdout(&out).contains("mean inference time"));

    let out = run(
        d,
        &["eval", "--checkpoint", "ckpt.json", "--dataset", "fixture.jsonl", "--oracle-aware", "--report", "aware.json", "--csv", "rows.csv"],
    );
    assert!(out.status.success());
    let plain: Value = serde_json::from_str(&fs::read_to_string(d.join("plain.json")).unwrap()).unwrap();
    let aware: Value = serde_json::from_str(&fs::read_to_string(d.join("aware.json")).unwrap()).unwrap();
    assert_eq!(plain["accuracy"], aware["accuracy"]);
    assert_eq!(plain["oracle_aware"], false);
    assert_eq!(aware["oracle_aware"], true);
    assert_eq!(fs::read_to_string(d.join("rows.csv")).unwrap().lines().count(), 5);
}

#[test]
fn eval_single_node_fixture_is_perfect() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fixture_checkpoint(&d.join("ckpt.json"));
    let q = scalar_graph(1, vec![], vec![4]);
    let g = scalar_graph(3, vec![(1, 2)], vec![4, 8, 1]);
    let line = serde_json::to_string(&Sample::new(q, g, vec![0]).unwrap()).unwrap();
    fs::write(d.join("one.jsonl"), line + "\n").unwrap();
    let out = run(d, &["eval", "--checkpoint", "ckpt.json", "--dataset", "one.jsonl"]);
    assert!(stdout(&out).contains("accuracy 1.000000"));
    assert!(stdout(&out).contains("f1 1.000000"));
}

#[test]
fn eval_reports_feature_dim_mismatch() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fixture_checkpoint(&d.join("ckpt.json"));
    let q = Graph::from_labels(1, vec![], vec![2], FeatureEncoding::OneHot, 3).unwrap();
    let g = Graph::from_labels(2, vec![], vec![2, 1], FeatureEncoding::OneHot, 3).unwrap();
    let line = serde_json::to_string(&Sample::new(q, g, vec![0]).unwrap()).unwrap();
    fs::write(d.join("onehot.jsonl"), line + "\n").unwrap();
    let out = run(d, &["eval", "--checkpoint", "ckpt.json", "--dataset", "onehot.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('1') && err.contains('3'), "{err}");
}

#[test]
fn oracle_lists_mappings() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let graph_json = |g: &Graph| serde_json::to_value(g).unwrap();
    write_json(d, "q.json", &graph_json(&scalar_graph(1, vec![], vec![3])));
    write_json(d, "g.json", &graph_json(&scalar_graph(4, vec![(0, 1)], vec![3, 1, 3, 2])));
    write_json(d, "none.json", &graph_json(&scalar_graph(2, vec![], vec![1, 2])));
    fs::write(d.join("broken.json"), "{ \"n\": 2 ").unwrap();

    let out = run(d, &["oracle", "--query", "q.json", "--data", "g.json"]);
    assert!(out.status.success());
    let maps: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(maps, json!([[0], [2]]));

    let out = run(d, &["oracle", "--query", "q.json", "--data", "g.json", "--limit", "1"]);
    assert_eq!(serde_json::from_str::<Value>(&stdout(&out)).unwrap(), json!([[0]]));

    let out = run(d, &["oracle", "--query", "q.json", "--data", "none.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "[]");

    let out = run(d, &["oracle", "--query", "broken.json", "--data", "g.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_prints_timings() {
    let dir = TempDir::new().unwrap();
    write_json(dir.path(), "exp.json", &smoke_config());
    let out = run(dir.path(), &["bench", "--config", "exp.json", "--samples", "5", "--warmup", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["samples"], 5);
    assert!(report["mean_ms"].as_f64().unwrap() >= 0.0);
    assert!(report["max_ms"].as_f64().unwrap() >= report["median_ms"].as_f64().unwrap());
}

#[test]
fn presets_load_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    let mut count = 0;
    for kind in ["dataset1", "dataset2"] {
        for entry in fs::read_dir(root.join(kind)).unwrap() {
            let path = entry.unwrap().path();
            let loaded = submatch::cli::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(loaded.config.train.iterations, 5000);
            count += 1;
        }
    }
    assert_eq!(count, 17);
}
