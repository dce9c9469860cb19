use std::path::PathBuf;
use std::process::{Command, Output};

use lookdown_core::harness::ExperimentResult;
use lookdown_core::rates::CdiVerdict;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lambda-lookdown"))
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn kernel_check_reports_pass() {
    let out = run(&["kernel-check"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert!(v["identities"]["max_mean_zero_residual"].as_f64().unwrap() <= 1e-12);
    assert!(v["identities"]["max_second_moment_error"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn cdi_for_kingman() {
    let out = run(&["cdi", "--config", &scenario("kingman.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v: CdiVerdict = serde_json::from_slice(&out.stdout).unwrap();
    let raw = stdout_json(&out);
    assert_eq!(raw["verdict"], "ComesDown");
    assert_eq!(raw["rationale"], "AtomAtZero");
    assert_eq!(serde_json::to_value(&v).unwrap(), raw);
}

#[test]
fn rates_total_column_for_uniform() {
    let out = run(&["rates", "--config", &scenario("bs.json"), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,total,phi,capital_phi"));
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let n: f64 = cols[0].parse().unwrap();
        let total: f64 = cols[1].parse().unwrap();
        assert!((total - (n - 1.0)).abs() < 1e-8 * n, "{line}");
        assert_eq!(cols[3], "inf");
        rows += 1;
    }
    assert_eq!(rows, 9);

    let json = stdout_json(&run(&["rates", "--config", &scenario("bs.json")]));
    assert_eq!(json["cdi"]["verdict"], "StaysInfinite");
    assert_eq!(json["rows"][3]["lambda"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fix.json");
    let out = run(&[
        "fixation",
        "--config",
        &scenario("fixation_kingman.json"),
        "--replicas",
        "40",
        "--seed",
        "11",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{out:?}");
    let text = std::fs::read_to_string(&path).unwrap();
    let res: ExperimentResult = serde_json::from_str(&text).unwrap();
    assert_eq!(res.name, "fixation");
    assert_eq!(res.seeds, vec![11]);
    assert_eq!(res.config.replicas, 40);
    let again = serde_json::to_string_pretty(&res).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentResult>(&again).unwrap(), res);
}

#[test]
fn path_csv_header_and_seed_override() {
    let a = run(&["sde", "--config", &scenario("sde.json"), "--replicas", "3"]);
    let b = run(&["sde", "--config", &scenario("sde.json"), "--replicas", "3", "--seed", "8"]);
    assert_eq!(a.status.code(), Some(0));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.starts_with("replica,t,value\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 5);
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(a.stdout, run(&["sde", "--config", &scenario("sde.json"), "--replicas", "3"]).stdout);
}

#[test]
fn dual_and_duality_outputs() {
    let out = run(&["dual", "--config", &scenario("dual_k.json"), "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["process"], "K");
    assert_eq!(v["points"][0]["value"]["mean"], 2.0);

    let out = run(&["duality", "--config", &scenario("duality.json"), "--replicas", "200"]);
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let v = stdout_json(&out);
    assert_eq!(v["cells"].as_array().unwrap().len(), 2 * 3 * 4 * 2);
    assert_eq!(v["replicas"], 200);
}

#[test]
fn missing_seed_refuses_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noseed.json");
    std::fs::write(&path, r#"{"lambda": {"atom0": 1.0}, "replicas": 2}"#).unwrap();
    let out = run(&["sde", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert!(out.stdout.is_empty());
    assert_eq!(run(&["sde", "--config", path.to_str().unwrap(), "--seed", "1"]).status.code(), Some(0));
}

#[test]
fn config_errors_name_path_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"lambda\": {\"atom0\": 1.0},\n  \"x0\": 0.5,\n  \"replica\": 3}").unwrap();
    let out = run(&["cdi", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("replica") && err.contains("line 3"), "{err}");

    std::fs::write(&path, r#"{"lambda": {"atom0": 1.0}, "alpha": -1}"#).unwrap();
    let err = String::from_utf8_lossy(&run(&["cdi", "--config", path.to_str().unwrap()]).stderr).into_owned();
    assert!(err.contains("`alpha`"), "{err}");

    assert_eq!(run(&["rates"]).status.code(), Some(2));
}

#[test]
fn precondition_violations_name_the_operation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext.json");
    std::fs::write(
        &path,
        r#"{"lambda": {"atom0": 1.0}, "alpha": 1.0, "seed": 1, "replicas": 2, "extinction": {"times": [1, 2]}}"#,
    )
    .unwrap();
    let out = run(&["extinction", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("extinction_threshold_experiment"), "{err}");
}
