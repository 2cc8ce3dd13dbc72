use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn localw2(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localw2")).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_clock(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

const QUICK_LINREG: [&str; 10] = ["linreg", "--n", "120", "--delta", "0.1", "--norm", "hetero", "--seed", "7", "--epochs"];

#[test]
fn linreg_report_has_errors_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = QUICK_LINREG.to_vec();
    args.extend(["15", "--repeats", "2", "--out", "run"]);
    let out = localw2(&args, tmp.path());
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("run");
    let text = fs::read_to_string(dir.join("report.json")).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["experiment"], "linreg");
    assert_eq!(report["seeds"], serde_json::json!([7, 8]));
    assert!(report["metrics"]["median_error_b"].is_f64());
    assert!(report["metrics"]["median_error_sigma"].is_f64());
    assert!(report["runs"][0]["error_b"].is_f64() && report["runs"][1]["error_sigma"].is_f64());
    assert_eq!(report["config"]["train"]["delta"], 0.1);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);
    assert!(dir.join("traces/loss_seed7.csv").is_file() && dir.join("traces/loss_seed8.csv").is_file());
    let resolved = fs::read_to_string(dir.join("config.resolved.txt")).unwrap();
    assert!(resolved.contains("norm = hete") && resolved.contains("epochs = 15"));
}

#[test]
fn same_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = QUICK_LINREG.to_vec();
        args.extend(["10", "--out", out]);
        assert_eq!(code(&localw2(&args, tmp.path())), Some(0));
    }
    let (a, b) = (read_json(&tmp.path().join("a/report.json")), read_json(&tmp.path().join("b/report.json")));
    assert_eq!(without_clock(a), without_clock(b));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = QUICK_LINREG.to_vec();
    args.extend(["10", "--out", "a"]);
    assert_eq!(code(&localw2(&args, tmp.path())), Some(0));
    let cfg = tmp.path().join("a/config.resolved.txt");
    let out = localw2(&["linreg", "--config", cfg.to_str().unwrap(), "--out", "b"], tmp.path());
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (a, b) = (read_json(&tmp.path().join("a/report.json")), read_json(&tmp.path().join("b/report.json")));
    assert_eq!(without_clock(a), without_clock(b));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.txt"), "n = 60\nepochs = 3\nrepeats = 1\ndelta = 0.3\n# comment\n").unwrap();
    let out = localw2(&["linreg", "--config", "c.txt", "--delta", "0.2", "--out", "r"], tmp.path());
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("r/report.json"));
    assert_eq!(report["config"]["n"], 60);
    assert_eq!(report["config"]["train"]["delta"], 0.2);
}

#[test]
fn invalid_values_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["linreg", "--delta", "0"],
        vec!["linreg", "--epochs", "-3"],
        vec!["linreg", "--norm", "taxicab"],
        vec!["linreg", "--loss", "kl"],
        vec!["linreg", "--local", "--global"],
        vec!["nn-recon", "--width", "0"],
        vec!["frobnicate"],
        vec!["concrete", "--data", "missing.csv"],
        vec!["concrete"],
        vec!["linreg", "--config", "missing.txt"],
    ] {
        let out = localw2(&args, tmp.path());
        assert_eq!(code(&out), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!tmp.path().join("runs").exists(), "validation failures must not create output");
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["bench-loss", "--n", "80", "--out", "r"];
    assert_eq!(code(&localw2(&args, tmp.path())), Some(0));
    let again = localw2(&args, tmp.path());
    assert_eq!(code(&again), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&localw2(&forced, tmp.path())), Some(0));
}

#[test]
fn bench_loss_reports_every_kind() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&localw2(&["bench-loss", "--n", "100", "--out", "r"], tmp.path())), Some(0));
    let report = read_json(&tmp.path().join("r/report.json"));
    let metrics = report["metrics"].as_object().unwrap();
    assert_eq!(metrics.len(), 8);
    assert!(metrics.values().all(|v| v.as_f64().unwrap() >= 0.0));
    assert!(tmp.path().join("r/curves/bench_loss.csv").is_file());
}

#[test]
fn verify_suites_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    for suite in ["oracles", "gradients", "bounds"] {
        let out = localw2(&["verify", suite], tmp.path());
        assert_eq!(code(&out), Some(0), "{suite}");
        assert!(String::from_utf8_lossy(&out.stdout).lines().all(|l| l.starts_with("PASS")));
    }
    let out = localw2(&["verify", "oracles", "--mutate"], tmp.path());
    assert_ne!(code(&out), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL assignment-vs-bruteforce"));
}

#[test]
fn small_nn_and_sweep_runs_write_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let nn = ["nn-recon", "--n", "60", "--epochs", "3", "--width", "4", "--depth", "2", "--repeats", "1", "--out", "nn"];
    assert_eq!(code(&localw2(&nn, tmp.path())), Some(0));
    let report = read_json(&tmp.path().join("nn/report.json"));
    assert!(report["metrics"]["median_sd_error"].is_f64());
    assert_eq!(report["runs"][0]["grid"].as_array().unwrap().len(), 11);
    assert!(tmp.path().join("nn/curves/grid_seed1.csv").is_file());

    let sweep = ["sweep-delta", "--n", "60", "--epochs", "3", "--deltas", "0.1,0.4", "--repeats", "2", "--out", "sw"];
    assert_eq!(code(&localw2(&sweep, tmp.path())), Some(0));
    let report = read_json(&tmp.path().join("sw/report.json"));
    assert_eq!(report["metrics"]["curve"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(tmp.path().join("sw/curves/sweep_delta.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn tiny_ode_run() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["ode", "--epochs", "2", "--m", "10", "--width", "8", "--repeats", "1", "--out", "o"];
    let out = localw2(&args, tmp.path());
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("o/report.json"));
    assert!(report["metrics"]["median_error_in_yhat"].is_f64());
    assert_eq!(report["config"]["ode"]["steps"], 10);
    assert!(tmp.path().join("o/trajectories/model_seed1.csv").is_file());
    assert!(tmp.path().join("o/curves/slices_seed1.csv").is_file());
}

#[test]
fn concrete_runs_on_a_supplied_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("Cement,Fly_Ash,Water,Superplasticizer,Coarse_Aggregate,Fine_Aggregate,Age,Strength\n");
    for i in 0..45 {
        let f = i as f64;
        csv.push_str(&format!(
            "{},{},{},{},{},{},28,{}\n",
            200.0 + 7.0 * f,
            (f * 13.0) % 90.0,
            150.0 + (f * 5.0) % 40.0,
            (f * 3.0) % 12.0,
            900.0 + (f * 11.0) % 100.0,
            700.0 + (f * 17.0) % 120.0,
            20.0 + 0.5 * f + (f * 1.7).sin()
        ));
    }
    fs::write(tmp.path().join("concrete.csv"), csv).unwrap();
    let args = [
        "concrete", "--data", "concrete.csv", "--epochs", "3", "--width", "4", "--depth", "2", "--delta0", "10",
        "--repeats", "1", "--out", "c",
    ];
    let out = localw2(&args, tmp.path());
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("c/report.json"));
    assert_eq!(report["runs"][0]["n_train"], 30);
    assert!(report["config"]["standardization"].as_str().unwrap().contains("population SD"));
}
