use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathsmooth"))
        .args(args)
        .env_remove("PATHSMOOTH_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn read(p: &str) -> String {
    std::fs::read_to_string(Path::new(p)).unwrap()
}

#[test]
fn simulate_zero_rows_writes_only_the_header() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "empty.csv");
    let r = run(&["simulate", "--model", "ou", "--n", "0", "--out", &out]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read(&out), "index,time,y\n");
    assert!(Path::new(&format!("{out}.json")).exists());
}

#[test]
fn same_seed_reproduces_and_environment_seed_is_a_fallback() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (path(&dir, "a.csv"), path(&dir, "b.csv"), path(&dir, "c.csv"));
    let base = ["simulate", "--model", "ou", "--theta", "0.5,0,0.4", "--n", "20", "--M", "50"];
    let mut args = base.to_vec();
    args.extend(["--seed", "7", "--out", &a]);
    assert_eq!(code(&run(&args)), 0);
    let mut args = base.to_vec();
    args.extend(["--seed", "7", "--out", &b]);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a).lines().count(), 21);

    let mut args = base.to_vec();
    args.extend(["--out", &c]);
    let r = Command::new(env!("CARGO_BIN_EXE_pathsmooth"))
        .args(&args)
        .env("PATHSMOOTH_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    assert_eq!(read(&a), read(&c));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "x.csv");
    assert_eq!(code(&run(&["simulate", "--model", "nope", "--out", &out])), 2);
    assert_eq!(code(&run(&["simulate", "--model", "ou", "--theta", "0.5,0", "--out", &out])), 2);
    assert_eq!(code(&run(&["fit", "--model", "ou", "--construct", "three", "--out", &out])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn malformed_data_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "bad.csv");
    std::fs::write(&data, "time,y\n0,0.1\n1,0.2\n2,oops\n").unwrap();
    let r = run(&["fit", "--model", "ou", "--data", &data, "--out", &path(&dir, "fit.csv")]);
    assert_eq!(code(&r), 2);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn fit_then_select_on_simulated_data() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "ou.csv");
    let sim = ["simulate", "--model", "ou", "--theta", "0.5,0,0.4", "--n", "15", "--M", "100", "--seed", "3", "--out", &data];
    assert_eq!(code(&run(&sim)), 0);

    let fit = path(&dir, "fit.csv");
    let r = run(&["fit", "--model", "ou", "--data", &data, "--theta0", "1,0.5,1", "--N", "20", "--grad", "analytic", "--out", &fit]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = read(&fit);
    assert!(text.starts_with("n,"));
    assert_eq!(text.lines().count(), 16);

    let sel = path(&dir, "select.csv");
    let r = run(&["select", "--model", "ou", "--data", &data, "--theta0", "1,0.5,1", "--N", "20", "--out", &sel]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = read(&sel);
    let header = text.lines().next().unwrap();
    assert!(header.contains("loglik_ou") && header.contains("bic_ou"), "{header}");
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn validate_passes_and_a_zero_tolerance_forces_failure() {
    let dir = TempDir::new().unwrap();
    let report = path(&dir, "report.csv");
    let r = run(&["validate", "--check", "round-trip", "--out", &report]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("PASS round-trip"));
    assert!(read(&report).contains("round-trip,true"));

    let r = run(&["validate", "--check", "round-trip", "--tolerance-scale", "0"]);
    assert_eq!(code(&r), 4);
    assert!(String::from_utf8_lossy(&r.stdout).starts_with("FAIL round-trip"));

    assert_eq!(code(&run(&["validate", "--check", "nope"])), 2);
}

#[test]
fn manifest_replays_a_run() {
    let dir = TempDir::new().unwrap();
    let first = path(&dir, "first.csv");
    let args = ["simulate", "--model", "periodic", "--n", "10", "--M", "20", "--seed", "11", "--out", &first];
    assert_eq!(code(&run(&args)), 0);
    let second = path(&dir, "second.csv");
    let manifest = format!("{first}.json");
    assert_eq!(code(&run(&["simulate", "--config", &manifest, "--out", &second])), 0);
    assert_eq!(read(&first), read(&second));
}
