use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owlset::data::write_dataset;
use owlset::recommend::one_step_from_margins;
use owlset::solver::{DecisionModel, ModelFile};
use owlset::simulate::{generate, ScenarioSpec};
use tempfile::TempDir;

fn owlset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owlset"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = owlset(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Example-1 style trial written as CSV.
fn dataset(dir: &Path, example: u8, n: usize) -> PathBuf {
    let spec = ScenarioSpec::new(example, 2);
    let ds = generate(&spec, n, 17).unwrap().data;
    let path = dir.join(format!("train{example}.csv"));
    write_dataset(&ds, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a prediction file as (set, itr, scores).
fn predictions(text: &str) -> Vec<(String, usize, Vec<f64>)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap(), f[3..].iter().map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn fit_writes_a_model_that_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 90);
    let model = dir.path().join("m.json");
    ok(&["fit", "--data", s(&data), "--out", s(&model), "--method", "one-step", "--kernel", "poly:2", "--lambda", "0.05"]);
    let text = fs::read_to_string(&model).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let file: ModelFile = serde_json::from_value(value["payload"]["model"].clone()).unwrap();
    let back = DecisionModel::from_file(file).unwrap().to_file();
    assert_eq!(serde_json::to_value(back).unwrap(), value["payload"]["model"]);
    assert_eq!(value["config"]["kernel"], "poly:2");
    assert_eq!(value["payload"]["kind"], "decision");
}

#[test]
fn identical_runs_give_identical_model_files() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 90);
    for (cmd, extra) in [("fit", vec!["--lambda", "0.1"]), ("tune", vec!["--lambda-grid", "5^-2..5^0", "--folds", "3"])] {
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("{cmd}{i}.json"));
                let mut args = vec![cmd, "--data", s(&data), "--out", s(&out), "--method", "one-step", "--seed", "4"];
                args.extend(&extra);
                ok(&args);
                fs::read(&out).unwrap()
            })
            .collect();
        assert_eq!(bytes[0], bytes[1], "{cmd}");
    }
}

#[test]
fn bent_loss_for_two_step_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 60);
    let out = owlset(&["fit", "--data", s(&data), "--out", s(&dir.path().join("m.json")), "--method", "two-step", "--loss", "bent-hinge"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config] exit=2:"));
}

#[test]
fn option_conflicts_and_unknown_tokens_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 60);
    let m = dir.path().join("m.json");
    for extra in [
        vec!["--method", "plugin", "--delta", "0.1"],
        vec!["--kernel", "spline"],
        vec!["--method", "three-step"],
        vec!["--folds", "1"],
        vec!["--randomized", "--propensity", "fit-logistic"],
    ] {
        let mut args = vec!["fit", "--data", s(&data), "--out", s(&m)];
        args.extend(&extra);
        assert_eq!(code(&owlset(&args)), 2, "{extra:?}");
    }
}

#[test]
fn bad_data_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.json");
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&owlset(&["fit", "--data", s(&missing), "--out", s(&m)])), 3);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,a,y,prop\n0.1,1,-2.0,0.5\n0.2,2,1.0,0.5\n").unwrap();
    assert_eq!(code(&owlset(&["fit", "--data", s(&bad), "--out", s(&m)])), 3);
}

#[test]
fn predict_rejects_mismatched_dimensions() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 60);
    let m = dir.path().join("m.json");
    ok(&["fit", "--data", s(&data), "--out", s(&m)]);
    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, "x1\n0.2\n0.4\n").unwrap();
    assert_eq!(code(&owlset(&["predict", "--model", s(&m), "--data", s(&narrow)])), 3);
}

#[test]
fn one_step_predictions_follow_the_margins() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 90);
    let m = dir.path().join("m.json");
    ok(&["fit", "--data", s(&data), "--out", s(&m), "--method", "one-step", "--kernel", "poly:2", "--lambda", "0.05"]);
    for delta in ["0", "0.15"] {
        let out = ok(&["predict", "--model", s(&m), "--data", s(&data), "--delta", delta]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains(&format!("# delta: {delta}")));
        let rows = predictions(&text);
        assert_eq!(rows.len(), 90);
        for (set, _, margins) in rows {
            assert!(!set.is_empty());
            assert_eq!(set, one_step_from_margins(&margins, delta.parse().unwrap()).to_string());
        }
    }
}

#[test]
fn two_treatment_sets_are_one_two_or_both() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("k2.csv");
    let mut text = String::from("x1,a,y,prop\n");
    for i in 0..40 {
        let x = i as f64 / 40.0;
        let a = i % 2 + 1;
        let y = if a == 1 { 1.0 + x } else { 2.0 - x };
        text.push_str(&format!("{x},{a},{y},0.5\n"));
    }
    fs::write(&path, text).unwrap();
    for method in ["plugin", "two-step", "one-step"] {
        let m = dir.path().join(format!("{method}.json"));
        ok(&["fit", "--data", s(&path), "--out", s(&m), "--method", method]);
        let out = ok(&["predict", "--model", s(&m), "--data", s(&path)]);
        for (set, itr, _) in predictions(&String::from_utf8(out.stdout).unwrap()) {
            assert!(["1", "2", "1+2"].contains(&set.as_str()), "{method}: {set}");
            assert!(set.contains(&itr.to_string()));
        }
    }
}

#[test]
fn tune_writes_scores_and_evaluate_reports_both_criteria() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 90);
    let m = dir.path().join("t.json");
    let scores = dir.path().join("scores.csv");
    ok(&[
        "tune", "--data", s(&data), "--out", s(&m), "--scores", s(&scores), "--method", "one-step",
        "--lambda-grid", "0.01,0.1", "--delta-grid=-0.1:0.1:3", "--folds", "3",
    ]);
    let table = fs::read_to_string(&scores).unwrap();
    assert!(table.starts_with("method,lambda,delta,fold,empirical_value,empirical_weighted_outcome"));
    let art: serde_json::Value = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
    assert_eq!(art["tuning"]["mode"], "3-fold cross-validation");
    let out = ok(&["evaluate", "--model", s(&m), "--data", s(&data)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\nempirical_value,"));
    assert!(text.contains("\nempirical_weighted_outcome,"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let data = dataset(dir.path(), 1, 60);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "method = \"two-step\"\nlambda = 0.2\n").unwrap();
    let lambda_of = |extra: &[&str]| {
        let m = dir.path().join("m.json");
        let mut args = vec!["--config", s(&cfg), "fit", "--data", s(&data), "--out", s(&m)];
        args.extend(extra);
        ok(&args);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
        assert_eq!(v["method"], "two-step");
        v["config"]["lambda"].as_f64().unwrap()
    };
    assert_eq!(lambda_of(&[]), 0.2);
    assert_eq!(lambda_of(&["--lambda", "0.3"]), 0.3);
    fs::write(&cfg, "lamda = 0.2\n").unwrap();
    assert_eq!(code(&owlset(&["--config", s(&cfg), "fit", "--data", s(&data), "--out", "x.json"])), 2);
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let mut args = vec![
        "simulate", "--out", s(&out), "--n-train", "120", "--n-test", "150", "--reps", "2", "--folds", "3",
        "--lambda-grid", "0.04,0.2", "--delta-grid", "0", "--max-sweeps", "200", "--seed", "3",
    ];
    args.extend(extra);
    ok(&args);
    fs::read_to_string(out).unwrap()
}

#[test]
fn small_simulation_emits_every_row_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "a.csv", &["--example", "1"]);
    let b = simulate(dir.path(), "b.csv", &["--example", "1"]);
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 9);
    for m in ["plugin", "two-step", "one-step", "bayes"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{m},ITR,"))));
        assert!(rows.iter().any(|r| r.starts_with(&format!("{m},A-ITR,"))));
    }
}

#[test]
fn bayes_rule_of_example_two_avoids_dominated_treatments() {
    let dir = TempDir::new().unwrap();
    let points = dir.path().join("points.csv");
    simulate(dir.path(), "r.csv", &["--example", "2", "--methods", "bayes", "--points", s(&points)]);
    let text = fs::read_to_string(points).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "id,x1,x2,region,bayes_itr,bayes_set");
    let mut count = 0;
    for l in lines {
        let itr = l.split(',').nth(4).unwrap();
        assert!(itr != "2" && itr != "4");
        count += 1;
    }
    assert_eq!(count, 150);
}

#[test]
fn invalid_example_is_a_config_error() {
    assert_eq!(code(&owlset(&["simulate", "--example", "9"])), 2);
}
