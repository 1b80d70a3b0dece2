use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qpflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpflow"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> Output {
    let o = qpflow(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn code(args: &[&str], out: &Path) -> i32 {
    qpflow(args, out).status.code().expect("exit code")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&read(path)).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn small_dataset(dir: &Path, n: &str) -> std::path::PathBuf {
    ok(&["dataset", "--n", n, "--seed", "5"], dir);
    dir.join("dataset.csv")
}

#[test]
fn solve_prints_base_case_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(&["solve"], dir.path());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("converged in 3 iterations"), "{stdout}");
    let doc = json(dir.path().join("solution.json"));
    let buses = doc["buses"].as_array().unwrap();
    assert_eq!(buses.len(), 4);
    assert!((buses[1]["v_mag_pu"].as_f64().unwrap() - 0.982421).abs() < 1e-6);
    assert!(dir.path().join("resolved_solve.json").exists());
}

#[test]
fn shipped_network_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let net = concat!(env!("CARGO_MANIFEST_DIR"), "/../../networks/four_bus.json");
    ok(&["solve", net], dir.path());
    let from_file = read(dir.path().join("solution.csv"));
    ok(&["solve"], dir.path());
    assert_eq!(from_file, read(dir.path().join("solution.csv")));
}

#[test]
fn exit_codes_are_distinct_per_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["solve", "--bogus"], d), 2);
    assert_eq!(code(&["solve", "/nonexistent/net.json"], d), 3);
    let broken = d.join("broken.json");
    std::fs::write(&broken, "{\"buses\": [").unwrap();
    assert_eq!(code(&["solve", broken.to_str().unwrap()], d), 4);
    assert_eq!(code(&["solve", "--max-iter", "1"], d), 5);
    assert_eq!(code(&["train"], d), 2);
    assert_eq!(code(&["dataset", "--range", "0.8,1.0,1.2"], d), 2);
    assert_eq!(code(&["dataset", "--range", "1.2,0.8"], d), 4);
}

#[test]
fn not_converged_reports_history() {
    let dir = tempfile::tempdir().unwrap();
    let o = qpflow(&["solve", "--max-iter", "1"], dir.path());
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch history"));
}

#[test]
fn empty_sweep_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "60");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"sweep": {"betas": []}}"#).unwrap();
    let args = [
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
    ];
    assert_eq!(code(&args, dir.path()), 2);
}

#[test]
fn dataset_split_and_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(&["dataset", "--seed", "11"], d);
    }
    assert_eq!(rows(&read(a.path().join("dataset.csv"))).len(), 3000);
    assert_eq!(rows(&read(a.path().join("train.csv"))).len(), 2400);
    assert_eq!(rows(&read(a.path().join("test.csv"))).len(), 600);
    for f in ["dataset.csv", "train.csv", "test.csv", "dataset.meta.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let meta = json(a.path().join("dataset.meta.json"));
    assert!(meta["scalers"].is_object());
}

#[test]
fn serial_flag_does_not_change_dataset() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["dataset", "--n", "200"], a.path());
    ok(&["dataset", "--n", "200", "--serial"], b.path());
    assert_eq!(
        read(a.path().join("dataset.csv")),
        read(b.path().join("dataset.csv"))
    );
}

#[test]
fn unit_range_yields_identical_targets() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["dataset", "--n", "20", "--range", "1,1"], dir.path());
    let csv = read(dir.path().join("dataset.csv"));
    let data = rows(&csv);
    let targets = |r: &Vec<String>| r[r.len() - 6..r.len() - 1].to_vec();
    let first = targets(&data[0]);
    assert!(data.iter().all(|r| targets(r) == first));
    // V2 of the base case
    let v2: f64 = first[0].parse().unwrap();
    assert!((v2 - 0.982421).abs() < 1e-6, "{v2}");
}

fn curve(path: &Path) -> Vec<(f64, f64)> {
    rows(&read(path))
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect()
}

#[test]
fn activation_curve_is_odd_and_mode_insensitive() {
    let exact = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    ok(
        &["activation", "simulate", "--spin", "1/2", "--gamma", "0"],
        exact.path(),
    );
    ok(
        &[
            "activation",
            "simulate",
            "--spin",
            "1/2",
            "--gamma",
            "0",
            "--mode",
            "second-order",
        ],
        second.path(),
    );
    let a = curve(&exact.path().join("activation_1_2.csv"));
    let b = curve(&second.path().join("activation_1_2.csv"));
    assert_eq!(a.len(), 41);
    assert!(a[20].0.abs() < 1e-12 && a[20].1.abs() < 1e-3);
    for ((ua, ya), (ub, yb)) in a.iter().zip(&b) {
        assert_eq!(ua, ub);
        assert!((ya - yb).abs() < 1e-3, "u={ua}: {ya} vs {yb}");
    }
    let fit = json(exact.path().join("beta_fit_1_2.json"));
    assert!(fit["beta"].as_f64().unwrap() > 0.0);
    assert!(exact.path().join("beta_summary.csv").exists());
}

#[test]
fn activation_fit_reads_simulated_curve() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["activation", "simulate", "--spin", "1", "--points", "11"],
        dir.path(),
    );
    let sim = json(dir.path().join("beta_fit_1.json"));
    let curve = dir.path().join("activation_1.csv");
    ok(&["activation", "fit", curve.to_str().unwrap()], dir.path());
    let refit = json(dir.path().join("beta_fit.json"));
    assert!((sim["beta"].as_f64().unwrap() - refit["beta"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn train_then_evaluate_agree_on_test_mse() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "150");
    let d = data.to_str().unwrap();
    ok(
        &[
            "train",
            "--dataset",
            d,
            "--spin",
            "5/2",
            "--epochs",
            "5",
            "--batch-size",
            "20",
        ],
        dir.path(),
    );
    let report = json(dir.path().join("train_report.json"));
    assert_eq!(report["beta"].as_f64(), Some(4.1));
    let log = read(dir.path().join("epoch_log.csv"));
    assert_eq!(log.lines().count(), 1 + 6);
    let model = dir.path().join("model.json");
    ok(
        &[
            "evaluate",
            "--model",
            model.to_str().unwrap(),
            "--dataset",
            d,
        ],
        dir.path(),
    );
    let eval = json(dir.path().join("evaluation.json"));
    assert_eq!(eval["n_samples"].as_u64(), Some(30));
    let (a, b) = (
        report["test_mse"].as_f64().unwrap(),
        eval["mse"].as_f64().unwrap(),
    );
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    let mape_train = rows(&read(dir.path().join("mape.csv")));
    let mape_eval = rows(&read(dir.path().join("evaluation_mape.csv")));
    assert_eq!(mape_train, mape_eval);
}

#[test]
fn table4_preset_reports_mape_per_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "120");
    let args = [
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--preset",
        "table4",
        "--beta",
        "8",
        "--optimizer",
        "adamax",
        "--epochs",
        "3",
    ];
    let o = ok(&args, dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("MAPE"));
    let mape = rows(&read(dir.path().join("mape.csv")));
    assert_eq!(mape.len(), 5);
    for r in &mape {
        let v: f64 = r[1].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{r:?}");
    }
    let resolved = json(dir.path().join("resolved_train.json"));
    let text = resolved.to_string();
    assert!(text.contains("adamax"), "{text}");
}

#[test]
fn train_rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let data = small_dataset(d, "100");
        ok(
            &[
                "train",
                "--dataset",
                data.to_str().unwrap(),
                "--epochs",
                "3",
                "--seed",
                "9",
            ],
            d,
        );
    }
    for f in ["model.json", "epoch_log.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn sweep_writes_grid_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "100");
    let args = [
        "sweep",
        "--dataset",
        data.to_str().unwrap(),
        "--betas",
        "2.22,4.1",
        "--optimizers",
        "adam,sgd",
        "--seeds",
        "0,1",
        "--epochs",
        "2",
        "--hidden-layers",
        "2",
    ];
    ok(&args, dir.path());
    assert_eq!(rows(&read(dir.path().join("sweep_runs.csv"))).len(), 8);
    assert_eq!(rows(&read(dir.path().join("sweep_epochs.csv"))).len(), 16);
    let summary = read(dir.path().join("sweep_summary.csv"));
    assert!(summary.starts_with("beta,median_final_mse_adam,median_final_mse_sgd"));
    assert_eq!(rows(&summary).len(), 2);
}
