use std::path::Path;
use std::process::{Command, Output};

use cmiknn_core::datagen::{sample_gaussian_chain, GaussianChainConfig};
use serde_json::Value;

fn cmiknn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmiknn"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("CMIKNN_OUT_DIR")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const QUICK: [&str; 6] = ["--n", "3000", "--epochs", "3", "--seed", "5"];

#[test]
fn infeasible_k_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut args = vec!["synth", "--k", "5000"];
    args.extend(QUICK);
    let res = cmiknn(&args, &out);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("schedule"));
    assert!(!out.exists());
}

#[test]
fn trial_count_sets_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    let mut args = vec!["synth", "--trials", "10"];
    args.extend(QUICK);
    let res = cmiknn(&args, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(out.join("xy_given_z_isolated_knn_trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let report = json(&out.join("report.json"));
    assert_eq!(report["runs"][0]["isolated_knn"]["per_trial"].as_array().unwrap().len(), 10);
    assert!(out.join("timings.json").exists());
}

#[test]
fn zero_preset_reports_zero_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero");
    let mut args = vec!["synth", "--preset", "zero", "--trials", "1"];
    args.extend(QUICK);
    assert!(cmiknn(&args, &out).status.success());
    let report = json(&out.join("report.json"));
    assert_eq!(report["runs"][0]["name"], "xz_given_y");
    assert_eq!(report["runs"][0]["truth"].as_f64(), Some(0.0));
}

#[test]
fn estimate_reads_columns_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample_gaussian_chain(&GaussianChainConfig::standard(1), 2000, 9).unwrap();
    let plain = dir.path().join("plain.csv");
    ds.save_csv(&plain).unwrap();

    // Same data with the columns in reverse order.
    let text = std::fs::read_to_string(&plain).unwrap();
    let reversed: String = text
        .lines()
        .map(|l| l.split(',').rev().collect::<Vec<_>>().join(",") + "\n")
        .collect();
    let shuffled = dir.path().join("shuffled.csv");
    std::fs::write(&shuffled, reversed).unwrap();

    let run = |input: &Path, name: &str| {
        let out = dir.path().join(name);
        let res = cmiknn(
            &["estimate", "--input", input.to_str().unwrap(), "--dims", "1,1,1", "--epochs", "3", "--trials", "2"],
            &out,
        );
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        json(&out.join("report.json"))["runs"][0]["isolated_knn"]["per_trial"].clone()
    };
    assert_eq!(run(&plain, "a"), run(&shuffled, "b"));
}

#[test]
fn estimate_reports_a_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sample_gaussian_chain(&GaussianChainConfig::standard(1), 100, 9).unwrap();
    let input = dir.path().join("d.csv");
    ds.save_csv(&input).unwrap();
    let out = dir.path().join("out");
    let res = cmiknn(&["estimate", "--input", input.to_str().unwrap(), "--dims", "2,1,1"], &out);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing column `x_1`"));
    assert!(!out.exists());
}

#[test]
fn single_cell_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\n[bench]\nn = [2000]\nk = [2]\nd = [1]\nmethods = [\"isolated_knn\", \"midiff\"]\nmwu = true\n\
         [net]\nepochs = 3\n[schedule]\ntrials = 3\n",
    )
    .unwrap();
    let out = dir.path().join("bench");
    let res = cmiknn(&["bench", "--config", cfg.to_str().unwrap()], &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let long = std::fs::read_to_string(out.join("bench_long.csv")).unwrap();
    // Header, then 2 methods x 3 trials x 3 estimators.
    assert_eq!(long.lines().count(), 1 + 2 * 3 * 3);
    let mwu = std::fs::read_to_string(out.join("mann_whitney.csv")).unwrap();
    assert_eq!(mwu.lines().count(), 2);
    assert!(mwu.contains("exact"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 1\n[net]\nepoch = 3\n").unwrap();
    let res = cmiknn(&["synth", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("epoch"));
}
