use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ensemble_gp::data_io::load_csv;
use ensemble_gp::model_file;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ensemble-gp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir, n: usize) -> PathBuf {
    let path = dir.path().join("data.csv");
    ok(&["synth", "--output", p(&path), "--n", &n.to_string(), "--seed", "5"]);
    path
}

const QUICK: [&str; 8] = ["--iterations", "3", "--initial-designs", "4", "--folds", "3", "--tune-budget", "10"];

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK).collect()
}

#[test]
fn synth_writes_commented_header_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = synth(&dir, 50);
    let first = fs::read_to_string(&a).unwrap();
    assert!(first.starts_with("# synthetic marketing data n=50 seed=5"));
    ok(&["synth", "--output", p(&a), "--n", "50", "--seed", "5"]);
    assert_eq!(fs::read_to_string(&a).unwrap(), first);
    let d = load_csv(&a, "Product_Sold").unwrap();
    assert_eq!((d.n_rows(), d.n_features()), (50, 6));
}

#[test]
fn inspect_reports_all_columns_and_duplicate_correlation() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("dup.csv");
    fs::write(&path, "a,b,Product_Sold\n1,1,3\n2,2,1\n4,4,7\n3,3,2\n").unwrap();
    let corr = dir.path().join("corr.csv");
    let stdout = ok(&["inspect", "--input", p(&path), "--output", p(&corr)]);
    for name in ["a", "b", "Product_Sold"] {
        assert!(stdout.lines().any(|l| l.starts_with(name)), "{stdout}");
    }
    let text = fs::read_to_string(&corr).unwrap();
    let row_a: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row_a[..3], ["a", "1.000000", "1.000000"]);
}

#[test]
fn missing_file_exits_2_and_names_path() {
    let out = run(&["inspect", "--input", "/no/such/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.csv"));
}

#[test]
fn malformed_cell_exits_2_with_row_and_column() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "TV,Product_Sold\n1,2\nabc,3\n").unwrap();
    let out = run(&["inspect", "--input", p(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("TV"), "{err}");
}

#[test]
fn numerical_failure_exits_1() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("const.csv");
    fs::write(&path, "TV,Product_Sold\n1,5\n1,6\n1,7\n1,8\n").unwrap();
    let out = run(&[
        "transform",
        "--input",
        p(&path),
        "--output",
        p(&dir.path().join("t.csv")),
        "--transform",
        "yeo-johnson",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn optimize_writes_trace_weights_and_model() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 60);
    let out = dir.path().join("opt");
    ok(&with_quick(&["optimize", "--input", p(&data), "--output", p(&out)]));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 4 + 3);
    let weights = fs::read_to_string(out.join("weights.txt")).unwrap();
    let sum: f64 = weights.lines().map(|l| l.split(" = ").nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-9);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# accuracy_pct ="));
    for k in ["rbf", "rq", "matern", "ensemble"] {
        assert_eq!(metrics.lines().filter(|l| l.starts_with(&format!("{k},"))).count(), 2);
    }
    model_file::load(out.join("model.txt")).unwrap();
}

#[test]
fn fit_predict_interpolates_training_rows() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 40);
    let model = dir.path().join("m.txt");
    ok(&with_quick(&["fit", "--input", p(&data), "--model", p(&model), "--kernel", "rbf", "--noise", "1e-10"]));
    let preds = dir.path().join("p.csv");
    ok(&["predict", "--input", p(&data), "--model", p(&model), "--output", p(&preds)]);

    let loaded = model_file::load(&model).unwrap();
    let d = load_csv(&data, "Product_Sold").unwrap();
    let y_t = loaded.transform.forward_target(d.target()).unwrap();
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row_id,mean,variance,mean_original"));
    for (i, line) in lines.enumerate() {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0] as usize, i + 1);
        assert!((f[1] - y_t[i]).abs() <= 1e-4, "row {}: {} vs {}", i + 1, f[1], y_t[i]);
        assert!(f[2] >= 0.0);
    }
}

#[test]
fn saved_model_predicts_like_in_memory_model() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 40);
    let model = dir.path().join("m.txt");
    ok(&with_quick(&["fit", "--input", p(&data), "--model", p(&model), "--weights", "0.5,0.3,0.2"]));
    let loaded = model_file::load(&model).unwrap();
    let again = model_file::parse(&model_file::render(&loaded)).unwrap();
    let d = load_csv(&data, "Product_Sold").unwrap();
    let a = loaded.predict(d.features()).unwrap();
    let b = again.predict(d.features()).unwrap();
    assert!((&a.mean - &b.mean).amax() <= 1e-10);
    assert!((&a.variance - &b.variance).amax() <= 1e-10);
}

#[test]
fn predict_with_missing_column_is_schema_error() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 40);
    let model = dir.path().join("m.txt");
    ok(&with_quick(&["fit", "--input", p(&data), "--model", p(&model), "--kernel", "matern"]));
    let text = fs::read_to_string(&data).unwrap();
    let dropped: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').skip(1).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let partial = dir.path().join("partial.csv");
    fs::write(&partial, dropped).unwrap();
    let out = run(&["predict", "--input", p(&partial), "--model", p(&model), "--output", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'TV'"));
}

#[test]
fn evaluate_on_training_rows_reaches_unit_r2() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 40);
    let model = dir.path().join("m.txt");
    ok(&with_quick(&["fit", "--input", p(&data), "--model", p(&model), "--kernel", "rq", "--noise", "1e-10"]));
    let out = dir.path().join("ev");
    ok(&["evaluate", "--input", p(&data), "--model", p(&model), "--output", p(&out)]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let transformed = metrics.lines().find(|l| l.starts_with("transformed,")).unwrap();
    let r2: f64 = transformed.split(',').nth(4).unwrap().parse().unwrap();
    assert!(r2 > 1.0 - 1e-6, "{r2}");
    let pva = fs::read_to_string(out.join("predicted_vs_actual.csv")).unwrap();
    assert_eq!(pva.lines().count(), 41);
}

#[test]
fn evaluate_with_split_and_report() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 50);
    let ev = dir.path().join("ev");
    ok(&with_quick(&["evaluate", "--input", p(&data), "--output", p(&ev), "--test-fraction", "0.2"]));
    let pva = fs::read_to_string(ev.join("predicted_vs_actual.csv")).unwrap();
    assert_eq!(pva.lines().count(), 1 + 10);

    let rep = dir.path().join("report");
    ok(&with_quick(&["report", "--input", p(&data), "--output", p(&rep), "--transform", "yeo-johnson"]));
    for f in [
        "skewness.csv",
        "correlation.csv",
        "trace.csv",
        "kernel_metrics.csv",
        "weights.txt",
        "model.txt",
        "holdout/metrics.csv",
        "holdout/predicted_vs_actual.csv",
    ] {
        assert!(rep.join(f).exists(), "missing {f}");
    }
    let skew = fs::read_to_string(rep.join("skewness.csv")).unwrap();
    assert!(skew.starts_with("column,skewness_raw,skewness_yeo_johnson"));
    assert_eq!(skew.lines().count(), 1 + 7);
}

#[test]
fn bad_flags_are_rejected() {
    let dir = TempDir::new().unwrap();
    let data = synth(&dir, 30);
    for args in [
        vec!["inspect", "--input", p(&data), "--transform", "box-cox"],
        vec!["fit", "--input", p(&data), "--model", "m.txt", "--nu", "2"],
        vec!["fit", "--input", p(&data), "--model", "m.txt", "--weights", "0.5,0.6,0.2"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}
