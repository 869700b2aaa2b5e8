use std::process::Command;

use nclab_cli::RunConfig;
use serde_json::Value;

fn nclab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nclab")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn write_config(dir: &tempfile::TempDir, body: &str) -> String {
    let path = dir.path().join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn darboux_report_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"darboux": {"trials": 10}}"#);
    let out = dir.path().join("r.json");
    let (code, stdout, _) = nclab(&["darboux", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(rep["command"], "darboux");
    assert_eq!(rep["results"]["pfaffian"]["value"], -0.5);
    let echo: RunConfig = serde_json::from_value(rep["config"].clone()).unwrap();
    assert_eq!(echo.seed, 4);
    assert_eq!(echo.darboux.trials, 10);
    assert!(rep.get("timings").is_none());
}

#[test]
fn spectrum_json_is_sorted_by_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"spectrum": {"level": 12, "clusters": 7, "ground_level": 16}}"#);
    let (code, stdout, stderr) = nclab(&["spectrum", "--config", &cfg]);
    assert_eq!(code, 0, "{stderr}");
    let rep: Value = serde_json::from_str(&stdout).unwrap();
    let ev: Vec<f64> = rep["results"]["eigenvalues"]["value"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(ev.len(), 2 * 13 * 14 / 2);
    assert!(ev.windows(2).all(|w| w[0].abs() <= w[1].abs()));
    let (_, csv, _) = nclab(&["spectrum", "--config", &cfg, "--format", "csv"]);
    assert_eq!(csv.lines().next(), Some("index,eigenvalue"));
    assert_eq!(csv.lines().count(), ev.len() + 1);
}

#[test]
fn converge_csv_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"converge": {"sweep": {"level": 12, "radii": [2, 4, 6]}, "chain": {"level": 10}, "structure": {"level": 10}}}"#,
    );
    let (code, csv, stderr) = nclab(&["converge", "--config", &cfg, "--format", "csv"]);
    assert_eq!(code, 0, "{stderr}");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "R,err_resolvent,err_direct");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2,"));
}

#[test]
fn failing_check_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"commutators": {"levels": [6, 8], "residual_tolerance": 0.0}}"#);
    let (code, _, stderr) = nclab(&["commutators", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(stderr.contains("FAIL gaussian_residual"));
}

#[test]
fn bad_input_exits_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"params": {"r": 2.0}}"#);
    let (code, _, stderr) = nclab(&["darboux", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(stderr.contains("r != hbar0/(theta0*B0)"));
    let cfg = write_config(&dir, r#"{"spectrum": {"levle": 3}}"#);
    let (code, _, stderr) = nclab(&["spectrum", "--config", &cfg]);
    assert_eq!(code, 2);
    assert!(stderr.contains("unknown field `levle`"));
}

#[test]
fn timings_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"record_timings": true, "darboux": {"trials": 3}}"#);
    let (_, stdout, _) = nclab(&["darboux", "--config", &cfg]);
    let rep: Value = serde_json::from_str(&stdout).unwrap();
    assert!(rep["timings"]["darboux"].is_f64());
}

#[test]
fn empty_config_is_all_defaults() {
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    let round: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(round, cfg);
}
