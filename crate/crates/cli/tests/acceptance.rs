//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`. Set `ACCEPTANCE_ONLY` to a
//! substring of a criterion name to run a subset.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use ctxprobe::embedstore::FeatureTable;
use ctxprobe::genset::{generate_dataset, Dataset, InfoType, Role, Split, Template};
use ctxprobe::lexicon::{load_lexicon, Lexicon, Pos};
use ctxprobe::probe::{evaluate, gradient_check, train, ProbeConfig};
use ctxprobe::report::read_results_csv;
use ctxprobe::rng::Stream;
use ctxprobe::stats::{bootstrap_ci, chance_test, summarize, Run, RunSet, BOOTSTRAP_RESAMPLES};
use ctxprobe::TaskSpec;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{Binomial, Discrete};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "dataset-contract",
            limit: Duration::from_secs(30),
            run: dataset_contract,
        },
        Criterion {
            name: "determinism",
            limit: Duration::from_secs(600),
            run: determinism,
        },
        Criterion {
            name: "probe-oracle-separable",
            limit: Duration::from_secs(60),
            run: probe_separable,
        },
        Criterion {
            name: "probe-oracle-shuffled",
            limit: Duration::from_secs(60),
            run: probe_shuffled,
        },
        Criterion {
            name: "probe-oracle-constant",
            limit: Duration::from_secs(60),
            run: probe_constant,
        },
        Criterion {
            name: "gradient-check",
            limit: Duration::from_secs(60),
            run: gradient_check_suite,
        },
        Criterion {
            name: "bootstrap-coverage",
            limit: Duration::from_secs(60),
            run: bootstrap_coverage,
        },
        Criterion {
            name: "chance-test-calibration",
            limit: Duration::from_secs(60),
            run: chance_calibration,
        },
        Criterion {
            name: "end-to-end-synthetic",
            limit: Duration::from_secs(900),
            run: end_to_end,
        },
    ];
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.as_deref().is_none_or(|o| c.name.contains(o))) {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(msg) if start.elapsed() > c.limit => Err(format!("{msg}; over time limit of {}s", c.limit.as_secs())),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("PASS {} ({secs:.1}s): {msg}", c.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} ({secs:.1}s): {msg}", c.name);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lexicon() -> Lexicon {
    load_lexicon(lexicon_path()).expect("shipped lexicon loads")
}

fn all_specs() -> Vec<TaskSpec> {
    let mut specs = Vec::new();
    for template in [Template::Base, Template::Distance] {
        for info in InfoType::ALL {
            let roles: &[Role] = match info {
                InfoType::Number | InfoType::Gender | InfoType::Animacy => &[Role::Subject, Role::Object],
                InfoType::Identity => &[Role::Subject, Role::Verb, Role::Object],
                _ => &[Role::Verb],
            };
            for &role in roles {
                specs.push(TaskSpec::new(info, role, template, 17));
            }
        }
    }
    specs
}

/// Counts every non-target feature value per class and requires equality.
fn stratification_oracle(ds: &Dataset, lex: &Lexicon) -> Result<(), String> {
    for split in [Split::Train, Split::Test] {
        let mut counts: BTreeMap<(String, String), BTreeMap<&str, usize>> = BTreeMap::new();
        let mut labels: HashSet<&str> = HashSet::new();
        for it in ds.split(split) {
            labels.insert(&it.label);
            for (&role, &idx) in &it.roles {
                if role == ds.spec.target_role {
                    continue;
                }
                let key_word = match role {
                    Role::Rc => it.rc_span().unwrap().join(" "),
                    Role::Adj => format!("{} {}", it.tokens[idx], it.tokens[idx + 2]),
                    _ => it.tokens[idx].clone(),
                };
                let mut facts = vec![format!("word={key_word}")];
                let pos = match role {
                    Role::Subject | Role::Object => Some(Pos::Noun),
                    Role::Verb => Some(Pos::Verb),
                    _ => None,
                };
                if let Some(pos) = pos {
                    let e = lex.find(&it.tokens[idx], pos).ok_or_else(|| format!("{} not in lexicon", it.tokens[idx]))?;
                    facts.extend(e.features.iter().map(|(f, v)| format!("{f}={v}")));
                }
                for f in facts {
                    *counts.entry((role.to_string(), f)).or_default().entry(&it.label).or_default() += 1;
                }
            }
        }
        for ((role, fact), per) in &counts {
            let vals: Vec<usize> = labels.iter().map(|l| per.get(l).copied().unwrap_or(0)).collect();
            if vals.iter().any(|&v| v != vals[0]) {
                return Err(format!("{} {split}: {role} {fact} unequal across classes {per:?}", ds.spec.id()));
            }
        }
    }
    Ok(())
}

fn dataset_contract() -> Outcome {
    let lex = lexicon();
    let specs = all_specs();
    for spec in &specs {
        let ds = generate_dataset(spec, &lex).map_err(|e| format!("{}: {e}", spec.id()))?;
        let (n_train, n_test, per_train, per_test) = if spec.info_type == InfoType::Identity {
            (3990, 990, 133, 33)
        } else {
            (4000, 1000, 2000, 500)
        };
        for (split, n, per) in [(Split::Train, n_train, per_train), (Split::Test, n_test, per_test)] {
            let items = ds.split(split);
            ensure(items.len() == n, || format!("{} {split}: {} items", spec.id(), items.len()))?;
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for it in items {
                *counts.entry(&it.label).or_default() += 1;
            }
            ensure(counts.len() == spec.k && counts.values().all(|&c| c == per), || {
                format!("{} {split}: label counts {counts:?}", spec.id())
            })?;
            if spec.template == Template::Base {
                ensure(items.iter().all(|it| it.tokens.len() == 5), || {
                    format!("{} {split}: base sentence not 5 tokens", spec.id())
                })?;
            }
        }
        let train: HashSet<&Vec<String>> = ds.train.iter().map(|it| &it.tokens).collect();
        ensure(ds.test.iter().all(|it| !train.contains(&it.tokens)), || {
            format!("{}: test sentence also in train", spec.id())
        })?;
        if spec.info_type != InfoType::Identity {
            stratification_oracle(&ds, &lex)?;
        }
    }
    Ok(format!("{} task specs balanced, disjoint and stratified", specs.len()))
}

fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut tasks = feature_tasks("base");
    tasks.push(task("identity", "object", "base"));
    tasks.extend(feature_tasks("distance"));
    let gen_a = tmp.path().join("gen_a");
    let gen_b = tmp.path().join("gen_b");
    for d in [&gen_a, &gen_b] {
        std::fs::create_dir_all(d).unwrap();
        let cfg = write_config(d, tasks.clone(), 2, 99, serde_json::json!({}));
        let out = ctxprobe(&["gen", "--config", cfg.to_str().unwrap()]);
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    }
    let a = read_all(&gen_a.join("out/datasets"));
    let b = read_all(&gen_b.join("out/datasets"));
    ensure(a.len() == 2 * tasks.len() && a == b, || "gen outputs differ".into())?;

    let small = vec![task("number", "subject", "base"), task("tense", "verb", "base")];
    let mut csvs = Vec::new();
    for name in ["probe_a", "probe_b"] {
        let d = tmp.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        let cfg = write_config(&d, small.clone(), 3, 5, serde_json::json!({}));
        prepare_mock(&d, &cfg);
        let out = ctxprobe(&["probe", "--config", cfg.to_str().unwrap()]);
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        csvs.push(std::fs::read(d.join("out/results.csv")).unwrap());
    }
    ensure(csvs[0] == csvs[1], || "probe CSVs differ".into())?;
    Ok(format!("{} dataset files and a 10-cell CSV byte-identical", a.len()))
}

fn table(rows: Array2<f32>, labels: Vec<String>, split: Split) -> FeatureTable {
    FeatureTable {
        task_id: "synthetic".into(),
        probed_role: Role::Subject,
        split,
        rows,
        labels,
    }
}

const SEPARABLE_MARGIN: f32 = 0.1;

/// Uniform points in [-1, 1]^16 labelled by the sign of coordinate 0, which
/// is kept at least `SEPARABLE_MARGIN` away from zero.
fn separable(n: usize, seed: u64) -> (Array2<f32>, Vec<String>) {
    let mut rng = Stream::root(seed).tag("points").rng();
    let mut rows = Array2::from_shape_simple_fn((n, 16), || rng.random_range(-1.0f32..1.0));
    rows.column_mut(0)
        .mapv_inplace(|x| x.signum() * (SEPARABLE_MARGIN + (1.0 - SEPARABLE_MARGIN) * x.abs()));
    let labels = rows
        .column(0)
        .iter()
        .map(|&x| if x > 0.0 { "POS" } else { "NEG" }.to_string())
        .collect();
    (rows, labels)
}

fn probe_separable() -> Outcome {
    let (xtr, ytr) = separable(1000, 1);
    let (xte, yte) = separable(1000, 2);
    let cfg = ProbeConfig { seed: 3, ..Default::default() };
    let p = train(&cfg, &table(xtr, ytr, Split::Train)).map_err(|e| e.to_string())?;
    let acc = evaluate(&p, &table(xte, yte, Split::Test)).map_err(|e| e.to_string())?;
    ensure(acc >= 0.99, || format!("accuracy {acc:.4} < 0.99"))?;
    Ok(format!("accuracy {acc:.4} after {} epochs", p.epochs_run))
}

fn probe_shuffled() -> Outcome {
    let (xtr, mut ytr) = separable(1000, 1);
    let (xte, mut yte) = separable(1000, 2);
    let mut rng = Stream::root(4).tag("shuffle").rng();
    ytr.shuffle(&mut rng);
    yte.shuffle(&mut rng);
    let cfg = ProbeConfig { seed: 5, ..Default::default() };
    let p = train(&cfg, &table(xtr, ytr, Split::Train)).map_err(|e| e.to_string())?;
    let acc = evaluate(&p, &table(xte, yte, Split::Test)).map_err(|e| e.to_string())?;
    ensure((0.45..=0.55).contains(&acc), || format!("accuracy {acc:.4} outside [0.45, 0.55]"))?;
    Ok(format!("accuracy {acc:.4}"))
}

fn probe_constant() -> Outcome {
    let labels = |n: usize| (0..n).map(|i| if i % 2 == 0 { "A" } else { "B" }.to_string()).collect();
    let xtr = Array2::from_elem((1000, 16), 0.5f32);
    let xte = Array2::from_elem((1000, 16), 0.5f32);
    let cfg = ProbeConfig { seed: 6, ..Default::default() };
    let p = train(&cfg, &table(xtr, labels(1000), Split::Train)).map_err(|e| e.to_string())?;
    let acc = evaluate(&p, &table(xte, labels(1000), Split::Test)).map_err(|e| e.to_string())?;
    ensure(acc <= 0.54, || format!("accuracy {acc:.4} > 0.54"))?;
    Ok(format!("accuracy {acc:.4}"))
}

fn gradient_check_suite() -> Outcome {
    let mut rng = Stream::root(2024).tag("gradcheck-configs").rng();
    let mut worst = 0f64;
    let mut skipped = 0;
    let mut params = 0;
    for i in 0..100u64 {
        let input = rng.random_range(1..=16usize);
        let depth = rng.random_range(0..=3usize);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=16usize)).collect();
        let classes = rng.random_range(2..=6usize);
        let rows = rng.random_range(1..=16usize);
        let x = Array2::from_shape_simple_fn((rows, input), || rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let cfg = ProbeConfig {
            hidden_layout: hidden,
            out_classes: classes,
            seed: i,
            ..Default::default()
        };
        let g = gradient_check(&cfg, x.view(), &y).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_rel_error);
        skipped += g.n_skipped;
        params += g.n_params;
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.2e} over {params} parameters ({skipped} at kinks skipped)"))
}

fn bootstrap_coverage() -> Outcome {
    const SIMS: usize = 500;
    const RUNS: usize = 50;
    const MEAN: f64 = 0.80;
    const SD: f64 = 0.03;
    let normal = rand_distr::Normal::new(MEAN, SD).unwrap();
    let mut rng = Stream::root(1).tag("coverage").rng();
    let mut covered = 0;
    for s in 0..SIMS {
        let accs: Vec<f64> = (0..RUNS).map(|_| normal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&accs, 0.95, BOOTSTRAP_RESAMPLES, s as u64).map_err(|e| e.to_string())?;
        if lo <= MEAN && MEAN <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / SIMS as f64;
    let (lo, hi) = bootstrap_ci(&[0.75; 50], 0.95, BOOTSTRAP_RESAMPLES, 0).map_err(|e| e.to_string())?;
    ensure((0.93..=0.97).contains(&rate), || format!("coverage {rate:.3} outside [0.93, 0.97]"))?;
    ensure((lo - 0.75).abs() < 1e-12 && (hi - 0.75).abs() < 1e-12, || {
        format!("zero-variance interval [{lo}, {hi}] is not a point")
    })?;
    let mut rs = RunSet::new("constant", 2, 1000);
    rs.runs = (0..50).map(|index| Run { index, accuracy: 0.75 }).collect();
    let r = summarize(&rs, 0).map_err(|e| e.to_string())?;
    ensure(r.ci_low == r.ci_high, || "summarized zero-variance interval is not a point".into())?;
    Ok(format!("coverage {rate:.3} over {SIMS} simulated run sets; zero variance gives a point"))
}

/// Two-sided exact binomial p-value from statrs probabilities.
fn oracle_p(x: u64, n: u64, p: f64) -> f64 {
    let b = Binomial::new(p, n).unwrap();
    let px = b.pmf(x);
    (0..=n).map(|i| b.pmf(i)).filter(|&q| q <= px * (1.0 + 1e-7)).sum::<f64>().min(1.0)
}

fn chance_calibration() -> Outcome {
    let cases: [(f64, usize, usize, u64, bool); 5] = [
        (0.56, 1000, 2, 560, false),
        (0.50, 1000, 2, 500, true),
        (33.0 / 990.0, 990, 30, 33, true),
        (0.1, 990, 30, 99, false),
        (0.53, 1000, 2, 530, true),
    ];
    let mut notes = Vec::new();
    for (acc, n, k, hits, expect_chance) in cases {
        let t = chance_test(acc, n, k).map_err(|e| e.to_string())?;
        let oracle = oracle_p(hits, n as u64, 1.0 / k as f64);
        ensure((t.p_value - oracle).abs() <= 1e-9 * oracle.max(1e-300) + 1e-12, || {
            format!("acc {acc} n {n} k {k}: p {} vs oracle {oracle}", t.p_value)
        })?;
        ensure(t.at_chance == expect_chance, || {
            format!("acc {acc} n {n} k {k}: at_chance {} (p = {:.3e})", t.at_chance, t.p_value)
        })?;
        notes.push(format!("{acc:.3}/{n}/k{k} p={:.2e}", t.p_value));
    }
    Ok(notes.join(", "))
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut tasks = feature_tasks("base");
    tasks.extend(feature_tasks("distance"));
    let cfg = write_config(dir, tasks, E2E_RUNS, 11, serde_json::json!({}));
    prepare_mock(dir, &cfg);
    let out = ctxprobe(&["probe", "--config", cfg.to_str().unwrap()]);
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let rows = read_results_csv(&dir.join("out/results.csv")).map_err(|e| e.to_string())?;
    ensure(rows.len() == 18 * 5, || format!("{} CSV rows, expected 90", rows.len()))?;
    let mut min_target = 1f64;
    for r in &rows {
        if r.probed_role == r.target_role {
            min_target = min_target.min(r.mean_acc);
            ensure(r.mean_acc >= 0.98 && !r.at_chance, || {
                format!("{} on {}: mean {:.4}", r.task, r.probed_role, r.mean_acc)
            })?;
        } else {
            ensure(r.at_chance, || {
                format!("{} on {}: mean {:.4} not at chance", r.task, r.probed_role, r.mean_acc)
            })?;
        }
    }
    Ok(format!(
        "{} cells x {E2E_RUNS} runs; target positions >= {min_target:.4}, all others at chance",
        rows.len()
    ))
}

/// Runs per cell in the end-to-end check.
const E2E_RUNS: usize = 10;
