//! Synthetic experiment fixtures shared by the CLI tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxprobe::embedstore::{write_container, EmbeddingSet};
use ctxprobe::genset::{read_dataset, InfoType, TaskSpec};
use ctxprobe::rng::Stream;
use ndarray::Array2;
use rand::Rng;
use serde_json::{json, Value};

pub const MOCK_DIM: usize = 16;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxprobe"))
}

pub fn ctxprobe(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

pub fn lexicon_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/lexicon.tsv")
}

/// Coordinate carrying each feature's label in the mock embeddings.
pub fn feature_coord(info: InfoType) -> Option<usize> {
    match info {
        InfoType::Number => Some(0),
        InfoType::Gender => Some(1),
        InfoType::Animacy => Some(2),
        InfoType::Tense => Some(3),
        InfoType::Causative => Some(4),
        InfoType::Dynamic => Some(5),
        InfoType::Identity => None,
    }
}

/// Context-free vector for a token type: uniform in [-1, 1].
pub fn token_vector(token: &str) -> Vec<f32> {
    let mut rng = Stream::root(0).tag("mock-token").tag(token).rng();
    (0..MOCK_DIM).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Builds a container for `spec`: every row is the token's type vector,
/// except that the target word's row carries the label as +1/-1 in the
/// feature's coordinate.
pub fn mock_container(dataset_dir: &Path, spec: &TaskSpec, out: &Path) {
    let ds = read_dataset(dataset_dir, spec).expect("dataset on disk");
    let mut labels: Vec<&str> = ds.items().map(|it| it.label.as_str()).collect();
    labels.sort();
    labels.dedup();
    let coord = feature_coord(spec.info_type);
    let mut es = EmbeddingSet::new("mock", -1, MOCK_DIM);
    for it in ds.items() {
        let mut m = Array2::zeros((it.tokens.len(), MOCK_DIM));
        for (r, tok) in it.tokens.iter().enumerate() {
            for (c, v) in token_vector(tok).into_iter().enumerate() {
                m[[r, c]] = v;
            }
        }
        if let Some(c) = coord {
            let row = it.roles[&spec.target_role];
            m[[row, c]] = if it.label == labels[0] { 1.0 } else { -1.0 };
        }
        es.insert(it.id.clone(), m).unwrap();
    }
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    write_container(out, &es).unwrap();
}

pub fn task(info: &str, role: &str, template: &str) -> Value {
    json!({"info_type": info, "target_role": role, "template": template})
}

/// The nine binary feature tasks on one template.
pub fn feature_tasks(template: &str) -> Vec<Value> {
    let mut out = Vec::new();
    for role in ["subject", "object"] {
        for info in ["number", "gender", "animacy"] {
            out.push(task(info, role, template));
        }
    }
    for info in ["tense", "causative", "dynamic"] {
        out.push(task(info, "verb", template));
    }
    out
}

/// Writes a mock-encoder config into `dir` and returns its path.
pub fn write_config(dir: &Path, tasks: Vec<Value>, runs: usize, seed: u64, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "lexicon": lexicon_path(),
        "tasks": tasks,
        "encoders": [{"id": "mock", "container": "emb/{task}.ctxemb"}],
        "runs": runs,
        "seed": seed,
        "output_dir": "out",
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        base.extend(more);
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Runs `gen` for the config in `dir` and writes a mock container per task.
pub fn prepare_mock(dir: &Path, config: &Path) {
    let out = ctxprobe(&["gen", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "gen failed: {}", String::from_utf8_lossy(&out.stderr));
    let cfg = ctxprobe::config::load_config(config).unwrap();
    for spec in cfg.task_specs() {
        mock_container(
            &dir.join("out/datasets"),
            &spec,
            &dir.join(format!("emb/{}.ctxemb", spec.id())),
        );
    }
}
