//! End-to-end checks of the command-line driver: exit codes, CSV shapes, and
//! byte-identical reruns under a fixed seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spinesim"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_writes_one_row_per_replica_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let cfg = config("logistic.toml");
    let cfg = cfg.to_str().unwrap();

    let first = run(&["simulate", "--config", cfg, "--out", out1.to_str().unwrap()]);
    assert_exit(&first, 0);
    let csv = fs::read_to_string(out1.join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001, "header plus one row per replica");
    assert!(csv.starts_with("replica,status,cell\n"));
    // the config asks for two genealogy dumps
    assert!(out1.join("trees-0.csv").exists());
    assert!(out1.join("events-1.csv").exists());

    let second = run(&["simulate", "--config", cfg, "--out", out2.to_str().unwrap()]);
    assert_exit(&second, 0);
    let rerun = fs::read(out2.join("simulate.csv")).unwrap();
    assert_eq!(fs::read(out1.join("simulate.csv")).unwrap(), rerun);

    // a different seed must actually change the draw
    let third = run(&[
        "simulate",
        "--config",
        cfg,
        "--seed",
        "8",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_exit(&third, 0);
    assert_ne!(fs::read(out2.join("simulate.csv")).unwrap(), rerun);
}

#[test]
fn compare_passes_on_the_logistic_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "compare",
        "--config",
        config("logistic.toml").to_str().unwrap(),
        "--replicas",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "check,model,psi,functional,lhs,se_lhs,rhs,se_rhs,zscore,pass"
    );
    // three two-sided rows plus the population-sum identity, all passing
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert!(row.ends_with(",true"), "row failed: {row}");
    }
}

#[test]
fn compare_detects_a_distorted_construction() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("logistic.toml")).unwrap();
    let broken = base.replace("sigmas = 3.0", "sigmas = 3.0\ndistortion = 1.5");
    let cfg_path = dir.path().join("broken.toml");
    fs::write(&cfg_path, broken).unwrap();

    let out = run(&[
        "compare",
        "--config",
        cfg_path.to_str().unwrap(),
        "--replicas",
        "4000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.contains(",false"), "no failing row:\n{report}");
}

#[test]
fn compare_refuses_tiny_replica_counts() {
    let out = run(&[
        "compare",
        "--config",
        config("logistic.toml").to_str().unwrap(),
        "--replicas",
        "10",
    ]);
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at least"), "stderr: {err}");
}

#[test]
fn eigen_matches_the_two_state_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eigen",
        "--config",
        config("capacity-two.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2 states"), "stdout: {stdout}");

    let csv = fs::read_to_string(dir.path().join("triplet.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let expected = [
        ("1", 4.0 / 3.0, 0.5, 2.0 / 3.0),
        ("2", 2.0 / 3.0, 0.5, 1.0 / 3.0),
    ];
    for (row, (comp, h, gamma, pi)) in rows.iter().zip(expected) {
        assert_eq!(row[1], "cell");
        assert_eq!(row[2], comp);
        assert!((row[3].parse::<f64>().unwrap() - h).abs() < 1e-9);
        assert!((row[4].parse::<f64>().unwrap() - gamma).abs() < 1e-9);
        assert!((row[5].parse::<f64>().unwrap() - pi).abs() < 1e-9);
    }
}

#[test]
fn eigen_requires_a_capacity() {
    let out = run(&[
        "eigen",
        "--config",
        config("phase.toml").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("capacity"), "stderr: {err}");
}

#[test]
fn phase_classifies_straddling_rates_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let cfg = config("phase.toml");
    let cfg = cfg.to_str().unwrap();

    let first = run(&["phase", "--config", cfg, "--out", out1.to_str().unwrap()]);
    assert_exit(&first, 0);
    let csv = fs::read_to_string(out1.join("phase.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(",regulated"), "{}", rows[0]);
    assert!(rows[1].ends_with(",growing"), "{}", rows[1]);

    let second = run(&["phase", "--config", cfg, "--out", out2.to_str().unwrap()]);
    assert_exit(&second, 0);
    assert_eq!(
        fs::read(out1.join("phase.csv")).unwrap(),
        fs::read(out2.join("phase.csv")).unwrap()
    );
}

#[test]
fn odelimit_errors_shrink_with_population_size() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("odelimit-logistic.toml")).unwrap();
    let quick = base
        .replace("ns = [100, 1000, 10000]", "ns = [200, 2000]")
        .replace("horizon = 5.0", "horizon = 3.0");
    let cfg_path = dir.path().join("quick.toml");
    fs::write(&cfg_path, quick).unwrap();

    let out = run(&[
        "odelimit",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let errors: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 2);
    assert!(
        errors[1] < errors[0],
        "errors did not shrink: {errors:?}"
    );
    assert!(dir.path().join("trajectory.csv").exists());
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("logistic.toml")).unwrap();
    let cfg_path = dir.path().join("noseed.toml");
    fs::write(&cfg_path, base.replace("seed = 7", "")).unwrap();

    let out = run(&["simulate", "--config", cfg_path.to_str().unwrap()]);
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "stderr: {err}");
}

#[test]
fn zero_replicas_is_a_config_error() {
    let out = run(&[
        "simulate",
        "--config",
        config("logistic.toml").to_str().unwrap(),
        "--replicas",
        "0",
    ]);
    assert_exit(&out, 2);
}
