use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gtvr::metrics::{read_csv, CSV_HEADER};

fn gtvr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtvr"))
        .args(args)
        .current_dir(dir)
        .env_remove("GTVR_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const BASE: &str = "dataset = synthetic:quadratic\nagents = 4\nsynthetic_m = 8\nsynthetic_d = 3\neta = 0.05\np = 0.5\noutput = out\n";

#[test]
fn zero_rounds_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}rounds = 0\nseed = 3\n"));
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/gtvr_quadratic_3.csv")).unwrap();
    assert_eq!(text, format!("{CSV_HEADER}\n"));
}

#[test]
fn run_writes_trace_and_jsonl_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}rounds = 40\nalgorithm = gtsaga\njsonl = true\n"));
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap(), "--seed", "8", "--no-timing"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("out/gtsaga_quadratic_8.csv");
    let rows = read_csv(std::fs::File::open(&csv).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(rows.len(), 41);
    assert!(rows.iter().all(|r| r.wall_ms == 0.0));
    let jsonl = std::fs::read_to_string(csv.with_extension("jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 41);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}rounds = 5\n"));
    let out = Command::new(env!("CARGO_BIN_EXE_gtvr"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("GTVR_SEED", "1234")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("out/gtvr_quadratic_1234.csv").exists());
}

#[test]
fn missing_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dataset = /no/such/a9a\nrounds = 3\n");
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/a9a"));
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}step_size = 0.1\n"));
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("step_size"));
}

#[test]
fn divergence_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "dataset = synthetic:quadratic\nagents = 4\neta = 80\nrounds = 2000\noutput = out\n");
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn theory_warning_does_not_block() {
    let dir = tempfile::tempdir().unwrap();
    // P = 0.3 sits below the admissible range for a ring.
    let cfg = write_config(dir.path(), &format!("{}rounds = 5\np = 0.3\n", BASE.replace("p = 0.5\n", "")));
    let out = gtvr(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lower bound"));
}

#[test]
fn sweep_writes_one_trace_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}rounds = 10\n"));
    let out = gtvr(
        &["sweep", "--config", cfg.to_str().unwrap(), "--eta", "0.01,0.02", "--p", "0.6", "--seeds", "1,2", "--no-timing"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listed.lines().count(), 4);
    for line in listed.lines() {
        assert!(dir.path().join(line).exists() || Path::new(line).exists(), "{line}");
    }
}

#[test]
fn theory_prints_text_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtvr(&["theory", "--rho", "0.5", "--p", "0.9", "--l", "1", "--json"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["eps3"].as_f64().unwrap() - 1.453125).abs() < 1e-12);
    assert_eq!(v["contraction_ok"], serde_json::Value::Bool(true));
    let out = gtvr(&["theory", "--rho", "0.5", "--p", "0.9", "--l", "1"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("eta_bar ")));
    let bad = gtvr(&["theory", "--rho", "0.9", "--p", "0.9", "--l", "1"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn ingest_summarizes_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/a9a_head.libsvm");
    let out = gtvr(
        &["ingest", "--input", fixture.to_str().unwrap(), "--declared-d", "123", "--agents", "3", "--scheme", "round_robin"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rows      6"));
    assert!(text.contains("features  123"));
    assert!(text.contains("3 x 2 samples"));
}
