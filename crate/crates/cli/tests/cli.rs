use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_occupancy");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("OCCUPANCY_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Data rows of a CSV report as header-keyed maps.
fn rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn summary(text: &str, key: &str) -> String {
    let prefix = format!("# {key}=");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in report"))
        .to_string()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn verify_supercritical_gamma22() {
    let out = run(&["verify", "--dist", "gamma22", "--delta", "2", "--kmax", "5", "--ntrunc", "400"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows = rows(&text);
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| num(&r["rel_error"]) < 1e-3));
    assert!(num(&summary(&text, "balance_residual[gamma22]")) < 1e-10);
}

#[test]
fn verify_subcritical_exp1() {
    let out = run(&["verify", "--dist", "exp1", "--delta", "0.5", "--kmax", "5", "--ntrunc", "400"]);
    assert_eq!(code(&out), 0);
    assert!(rows(&stdout(&out)).iter().all(|r| num(&r["rel_error"]) < 1e-8));
}

#[test]
fn verify_rejects_non_phase_type() {
    let out = run(&["verify", "--dist", "det1", "--delta", "0.5"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase-type"));
}

#[test]
fn tolerance_breach_exits_one() {
    // far too few levels for the 1e-8 bound at δ = 0.9
    let out = run(&["verify", "--dist", "exp1", "--delta", "0.9", "--ntrunc", "20"]);
    assert_eq!(code(&out), 1);
    assert_eq!(summary(&stdout(&out), "status"), "tolerance_breach");
}

#[test]
fn numerical_failure_exits_three() {
    let out = run(&["solve-w", "--dist", "exp1", "--delta", "1e300"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn invalid_inputs_exit_two() {
    assert_eq!(code(&run(&["simulate", "--dist", "exp1"])), 2);
    assert_eq!(code(&run(&["simulate", "--dist", "nope", "--delta", "0.5"])), 2);
    assert_eq!(code(&run(&["estimate", "--from-ak", "0.5", "--level", "2"])), 2);
    assert_eq!(code(&run(&["counterexample", "--which", "batch", "--delta", "1.5", "--batch-size", "1"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"delta": 0.5, "replicates": 3}"#).unwrap();
    assert_eq!(code(&run(&["simulate", "--dist", "exp1", "--config", bad.to_str().unwrap()])), 2);
}

#[test]
fn solve_w_gamma22() {
    let out = run(&["solve-w", "--dist", "gamma22", "--delta", "2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let w: Vec<f64> = rows(&text).iter().map(|r| num(&r["w"])).collect();
    let root5 = 5f64.sqrt();
    assert!((w[0] - (root5 - 1.0) / 2.0).abs() < 1e-8);
    assert!((w[1] - (3.0 - root5) / 2.0).abs() < 1e-8);
    assert!(num(&summary(&text, "residual[gamma22]")) < 1e-10);
}

#[test]
fn estimate_from_extinction_time() {
    let out = run(&["estimate", "--from-t", "2"]);
    assert_eq!(code(&out), 0);
    assert!((num(&rows(&stdout(&out))[0]["delta_hat"]) - 0.796812).abs() < 1e-6);
    let out = run(&["estimate", "--from-t", "0.8"]);
    assert_eq!(num(&rows(&stdout(&out))[0]["delta_hat"]), 0.0);
    let out = run(&["estimate", "--from-ak", "0.125", "--level", "2", "--regime", "supercritical"]);
    assert!((num(&rows(&stdout(&out))[0]["delta_hat"]) - 4.0).abs() < 1e-12);
}

#[test]
fn simulate_det1_is_insensitive() {
    let out = run(&[
        "simulate", "--dist", "det1", "--delta", "0.5", "--reps", "200000", "--kmax", "4", "--seed", "42",
    ]);
    assert_eq!(code(&out), 0);
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| num(&r["z_score"]).abs() <= 4.0));
}

#[test]
fn simulate_critical_reports_capping() {
    let out = run(&["simulate", "--dist", "exp1", "--delta", "1", "--reps", "50000", "--event-cap", "1000000"]);
    assert_eq!(code(&out), 0);
    let rows = rows(&stdout(&out));
    assert!(rows.iter().all(|r| num(&r["capped_frac"]) > 0.0));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let base = ["simulate", "--dist", "gamma22,mix", "--delta", "2", "--reps", "3000", "--seed", "7"];
    for (file, workers) in [("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")] {
        let mut args = base.to_vec();
        let out = path(file);
        args.extend(["--workers", workers, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&run(&args)), 0);
    }
    assert_eq!(read(&path("a.csv")), read(&path("b.csv")));
    assert_eq!(read(&path("a.csv")), read(&path("c.csv")));

    // the embedded config alone reproduces the report, whatever the flags say
    let (original, replay) = (path("a.csv"), path("replay.csv"));
    let args = [
        "simulate", "--dist", "exp1", "--delta", "0.3", "--config", original.to_str().unwrap(), "--out",
        replay.to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(read(&path("a.csv")), read(&replay));
}

#[test]
fn json_report_replays() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let args = ["counterexample", "--which", "batch", "--delta", "1.5", "--reps", "2000", "--kmax", "2", "--format", "json"];
    let mut a = args.to_vec();
    a.extend(["--out", first.to_str().unwrap()]);
    code(&run(&a));
    let doc: serde_json::Value = serde_json::from_str(&read(&first)).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 4);
    assert_eq!(doc["config"]["which"], "batch");
    let replay = ["estimate", "--config", first.to_str().unwrap(), "--out", second.to_str().unwrap()];
    code(&run(&replay));
    assert_eq!(read(&first), read(&second));
}

#[test]
fn spec_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("mix.json");
    std::fs::write(&spec, r#"{"components":[{"p":0.5,"rates":[2.0]},{"p":0.5,"rates":[0.6666666667]}]}"#).unwrap();
    let out = run(&["verify", "--dist", spec.to_str().unwrap(), "--delta", "2", "--ntrunc", "100"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn workers_env_is_honoured() {
    let out = Command::new(BIN)
        .args(["simulate", "--dist", "exp1", "--delta", "0.5", "--reps", "500"])
        .env("OCCUPANCY_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
