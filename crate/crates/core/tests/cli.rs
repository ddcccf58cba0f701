use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use survkan::interpret::SymbolicModel;

fn survkan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survkan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = survkan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SQRT_SPEC: &str = r#"
n = 2000
seed = 5
censoring_rate = 0.3
intercept = 1.0
time_coefficient = 1.2

[[features]]
name = "x1"
distribution = { kind = "normal", mean = 0.0, sd = 1.0 }
coefficient = 0.5

[[features]]
name = "x2"
distribution = { kind = "uniform", low = -3.0, high = 3.0 }

[[features]]
name = "n1"
distribution = { kind = "normal", mean = 0.0, sd = 1.0 }

[[terms]]
kind = "sqrt"
feature = "x2"
scale = 0.8
inner_shift = 3.0
"#;

const SMALL_SPEC: &str = r#"
n = 300
seed = 2
censoring_rate = 0.25
intercept = -0.5

[[features]]
name = "age"
distribution = { kind = "normal", mean = 60.0, sd = 8.0 }
coefficient = 0.05

[[features]]
name = "treated"
distribution = { kind = "bernoulli", p = 0.5 }
coefficient = -0.7
"#;

fn synth(dir: &Path, spec: &str) -> std::path::PathBuf {
    let spec_path = dir.join("spec.toml");
    fs::write(&spec_path, spec).unwrap();
    let data = dir.join("data.csv");
    ok(&["synth", "--spec", p(&spec_path), "--out", p(&data)]);
    data
}

#[test]
fn train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL_SPEC);
    assert!(dir.path().join("data.csv.spec.toml").exists());
    let before = fs::read(&data).unwrap();

    let model = dir.path().join("model.txt");
    ok(&["train", "--data", p(&data), "--time-col", "time", "--event-col", "event",
        "--out-model", p(&model), "--epochs", "60", "--seed", "3"]);
    let report = fs::read_to_string(dir.path().join("model.txt.report.csv")).unwrap();
    assert!(report.starts_with("epoch,train_loss,train_nll,val_nll\n"));

    let eval_out = dir.path().join("eval.txt");
    ok(&["eval", "--data", p(&data), "--model", p(&model), "--train-data", p(&data), "--out-report", p(&eval_out)]);
    let text = fs::read_to_string(&eval_out).unwrap();
    let c: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("c_index = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=100.0).contains(&c) && c > 50.0, "c-index {c}");

    let curves = dir.path().join("curves.csv");
    ok(&["predict", "--data", p(&data), "--model", p(&model), "--grid-start", "0", "--grid-end", "2",
        "--grid-points", "5", "--out", p(&curves)]);
    let table = fs::read_to_string(&curves).unwrap();
    assert_eq!(table.lines().count(), 1 + 300 * 5);

    // inputs are never rewritten
    assert_eq!(fs::read(&data).unwrap(), before);
}

#[test]
fn unsorted_prediction_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL_SPEC);
    let model = dir.path().join("model.txt");
    ok(&["train", "--data", p(&data), "--out-model", p(&model), "--epochs", "5"]);
    let out = survkan(&["predict", "--data", p(&data), "--model", p(&model), "--grid-start", "2",
        "--grid-end", "1", "--grid-points", "5", "--out", p(&dir.path().join("c.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid input"));
}

#[test]
fn usage_and_inner_errors_exit_nonzero() {
    assert_eq!(survkan(&["train", "--no-such-flag"]).status.code(), Some(2));
    let out = survkan(&["eval", "--data", "/missing.csv", "--model", "/missing.txt",
        "--train-data", "/missing.csv", "--out-report", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL_SPEC);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "hidden = 2\ngrid_intervals = 3\nepochs = 4\nbase = \"identity\"\n").unwrap();
    let model = dir.path().join("m.txt");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--hidden", "1", "--out-model", p(&model)]);
    let text = fs::read_to_string(&model).unwrap();
    // hidden width from the flag, grid and base from the file
    assert!(text.contains("\nlayer 3 1\n") && text.contains("\nlayer 1 1\n"));
    assert!(text.lines().filter(|l| l.starts_with("edge ")).all(|l| l.starts_with("edge identity ")));
    let report = fs::read_to_string(dir.path().join("m.txt.report.csv")).unwrap();
    // header, the initial evaluation, then one row per epoch
    assert_eq!(report.lines().count(), 1 + 1 + 4);

    fs::write(&cfg, "hiden = 2\n").unwrap();
    let out = survkan(&["train", "--data", p(&data), "--config", p(&cfg), "--out-model", p(&model)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn repeated_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL_SPEC);
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for m in [&a, &b] {
        ok(&["train", "--data", p(&data), "--out-model", p(m), "--seed", "8", "--epochs", "30"]);
    }
    let strip = |path: &Path| -> String {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("created "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn interpret_and_plot_export_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SQRT_SPEC);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "base = \"identity\"\ngrid_intervals = 4\nlambda = 0.01\npatience = 50\n").unwrap();
    let model = dir.path().join("m.txt");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--seed", "1", "--out-model", p(&model)]);
    let out_dir = dir.path().join("interp");
    ok(&["interpret", "--model", p(&model), "--data", p(&data), "--prune-threshold", "0.05", "--out-dir", p(&out_dir)]);
    for f in ["attribution.csv", "pruned_model.txt", "formula.txt", "formula.toml"] {
        assert!(out_dir.join(f).exists(), "{f} not written");
    }
    let formula = fs::read_to_string(out_dir.join("formula.txt")).unwrap();
    assert!(formula.starts_with("log h(t | x) = "));
    let doc = SymbolicModel::from_toml(&fs::read_to_string(out_dir.join("formula.toml")).unwrap()).unwrap();
    assert!(doc.fidelity >= 0.95);
    assert!(doc.terms.iter().all(|t| t.input != "n1"), "noise feature survived pruning");

    let plots = dir.path().join("plots");
    ok(&["plot-export", "--model", p(&model), "--data", p(&data), "--out-dir", p(&plots), "--points", "11"]);
    let km = fs::read_to_string(plots.join("kaplan_meier.csv")).unwrap();
    assert!(km.starts_with("time,survival\n0,1\n"));
    assert_eq!(fs::read_to_string(plots.join("edge_0_0_0.csv")).unwrap().lines().count(), 12);
}

#[test]
#[ignore = "sqrt is not reliably distinguished from other concave kinds at n=2000; see README"]
fn interpret_recovers_a_sqrt_term() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SQRT_SPEC);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "base = \"identity\"\ngrid_intervals = 4\nlambda = 0.01\npatience = 50\n").unwrap();
    let model = dir.path().join("m.txt");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--seed", "1", "--out-model", p(&model)]);
    let out_dir = dir.path().join("interp");
    ok(&["interpret", "--model", p(&model), "--data", p(&data), "--out-dir", p(&out_dir)]);
    assert!(fs::read_to_string(out_dir.join("formula.txt")).unwrap().contains("sqrt("));
}

#[test]
fn search_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), SMALL_SPEC);
    let template = dir.path().join("t.toml");
    fs::write(&template, "epochs = 15\n").unwrap();
    let best = dir.path().join("best.toml");
    ok(&["search", "--data", p(&data), "--trials", "3", "--folds", "2", "--seed", "4",
        "--config", p(&template), "--out-config", p(&best)]);
    let config = survkan::training::TrainConfig::from_toml(&fs::read_to_string(&best).unwrap()).unwrap();
    assert_eq!(config.epochs, 15);
    let trials = fs::read_to_string(dir.path().join("best.toml.trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 4);
}
