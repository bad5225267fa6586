mod common;

use std::path::{Path, PathBuf};

use common::*;
use ctxprobe::config::load_config;
use ctxprobe::embedstore::{read_container, write_container};
use ctxprobe::genset::{split_file_name, Split};
use ctxprobe::lexicon::{load_lexicon, Pos};
use ctxprobe::TaskSpec;
use serde_json::json;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One number task probed at two roles with a tiny probe.
fn small_setup(dir: &Path) -> (PathBuf, TaskSpec) {
    let config = write_config(
        dir,
        vec![task("number", "subject", "base")],
        2,
        7,
        json!({
            "probed_roles": ["subject", "verb"],
            "probe": {"hidden_layout": [8], "max_epochs": 3},
        }),
    );
    prepare_mock(dir, &config);
    let spec = load_config(&config).unwrap().task_specs().remove(0);
    (config, spec)
}

fn container_path(dir: &Path, spec: &TaskSpec) -> PathBuf {
    dir.join(format!("emb/{}.ctxemb", spec.id()))
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn check_accepts_generated_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, _) = small_setup(tmp.path());
    let out = ctxprobe(&["check", "--config", s(&config)]);
    assert!(out.status.success(), "{}", stdout(&out));
}

#[test]
fn check_names_imbalanced_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, spec) = small_setup(tmp.path());
    let name = split_file_name(&spec, Split::Test);
    let path = tmp.path().join("out/datasets").join(&name);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = ctxprobe(&["check", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout(&out);
    assert!(
        report.lines().any(|l| l.contains(&name) && l.contains("label imbalance")),
        "{report}"
    );
}

#[test]
fn check_names_missing_sentence() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, spec) = small_setup(tmp.path());
    let path = container_path(tmp.path(), &spec);
    let mut es = read_container(&path).unwrap();
    let (id, _) = es.sentences.shift_remove_index(3).unwrap();
    write_container(&path, &es).unwrap();

    let out = ctxprobe(&["check", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains(&format!("`{id}`")), "{}", stdout(&out));
}

#[test]
fn report_rejects_empty_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("results.csv");
    std::fs::write(&csv, ctxprobe::report::COLUMNS.join(",") + "\n").unwrap();
    let figs = tmp.path().join("figs");
    let out = ctxprobe(&["report", "--csv", s(&csv), "--out", s(&figs)]);
    assert_eq!(out.status.code(), Some(2));
    let written = std::fs::read_dir(&figs).map(|d| d.count()).unwrap_or(0);
    assert_eq!(written, 0);
}

#[test]
fn resume_reproduces_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, _) = small_setup(tmp.path());
    let csv = tmp.path().join("out/results.csv");

    let out = ctxprobe(&["probe", "--config", s(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(&csv).unwrap();

    let out = ctxprobe(&["probe", "--config", s(&config), "--resume"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&csv).unwrap(), first);

    let out = ctxprobe(&["report", "--config", s(&config)]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().all(|l| l.ends_with(".svg")));
    assert!(!stdout(&out).is_empty());
}

#[test]
fn only_restricts_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, _) = small_setup(tmp.path());
    let out = ctxprobe(&["probe", "--config", s(&config), "--only", "*/verb/*"]);
    assert!(out.status.success());
    let rows = ctxprobe::report::read_results_csv(&tmp.path().join("out/results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].probed_role, ctxprobe::genset::Role::Verb);
}

#[test]
fn failed_cells_set_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let (config, spec) = small_setup(tmp.path());
    let path = container_path(tmp.path(), &spec);
    let mut es = read_container(&path).unwrap();
    for m in es.sentences.values_mut() {
        m.fill(f32::NAN);
    }
    write_container(&path, &es).unwrap();

    let out = ctxprobe(&["probe", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAILED"));
}

#[test]
fn vocab_merge_updates_listed_models() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("vocab.tsv");
    std::fs::write(&report, "men\tbert\nthe\tbert,gpt\n").unwrap();
    let merged = tmp.path().join("lexicon.tsv");
    let out = ctxprobe(&[
        "vocab-merge",
        "--lexicon",
        s(&lexicon_path()),
        "--report",
        s(&report),
        "--models",
        "bert,gpt",
        "--out",
        s(&merged),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let before = load_lexicon(lexicon_path()).unwrap();
    let after = load_lexicon(&merged).unwrap();
    let encoders = |lex: &ctxprobe::Lexicon, w: &str, pos: Pos| -> Vec<String> {
        lex.find(w, pos).unwrap().encoders.iter().cloned().collect()
    };
    assert_eq!(encoders(&after, "men", Pos::Noun), ["bert", "elmo", "glove"]);
    assert_eq!(encoders(&after, "the", Pos::Determiner), ["bert", "elmo", "glove", "gpt"]);
    assert_eq!(
        encoders(&after, "women", Pos::Noun),
        encoders(&before, "women", Pos::Noun)
    );
    assert_eq!(after.len(), before.len());
}
