use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qednet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qednet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn fluid_on_the_n_network() {
    let out = qednet(&["fluid", "-c", &config("n_network.toml")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let xi = &v["result"]["xi_star"];
    let expected = [[1.0, 0.25], [0.0, 0.75]];
    for i in 0..2 {
        for j in 0..2 {
            let got = xi[i][j].as_f64().unwrap();
            assert!((got - expected[i][j]).abs() < 1e-9, "xi*[{i}][{j}] = {got}");
        }
    }
    assert_eq!(v["command"], "fluid");
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["config"]["network"]["classes"], 2);
}

#[test]
fn missing_edge_rate_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("n_network.toml"))
        .unwrap()
        .replace("\"1-2\" = 1.0\n", "");
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, text).unwrap();
    let out = qednet(&["fluid", "-c", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("network.mu.1-2"), "stderr: {err}");
}

#[test]
fn bad_override_exits_with_config_code() {
    let out = qednet(&["fluid", "-c", &config("n_network.toml"), "--set", "run.bogus=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.bogus"));

    let out = qednet(&["fluid"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_convergence_run_writes_one_row_per_quantity() {
    let dir = tempfile::tempdir().unwrap();
    let out = qednet(&[
        "convergence",
        "-c",
        &config("single_class.toml"),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "run.seeds=[1]",
        "--set",
        "run.n_list=[50]",
        "--set",
        "run.horizon=2000.0",
        "--set",
        "run.sde_horizon=2000.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["entries"].as_array().unwrap().len(), 1);
    assert_eq!(report["config"]["run"]["n_list"], serde_json::json!([50]));

    let mut rdr = csv::Reader::from_path(dir.path().join("convergence.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["n", "estimate", "ci_lo", "ci_hi", "metric"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let cost_rows: Vec<_> = rows.iter().filter(|r| &r[4] == "cost").collect();
    assert_eq!(cost_rows.len(), 2);
    assert_eq!(&cost_rows[0][0], "50");
    assert_eq!(&cost_rows[1][0], "diffusion");
}

#[test]
fn event_log_is_written_behind_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let args = |log: &'static str| {
        vec![
            "simulate-ctmc".to_string(),
            "-c".into(),
            config("n_network.toml"),
            "--out".into(),
            dir.path().display().to_string(),
            "--set".into(),
            "run.n_list=[50]".into(),
            "--set".into(),
            "run.seeds=[3]".into(),
            "--set".into(),
            "run.horizon=20.0".into(),
            "--set".into(),
            format!("run.event_log={log}"),
        ]
    };
    let log_path = dir.path().join("simulate-ctmc.events.n50.seed3.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_qednet")).args(args("false")).output().unwrap();
    assert!(out.status.success());
    assert!(!log_path.exists());

    let out = Command::new(env!("CARGO_BIN_EXE_qednet")).args(args("true")).output().unwrap();
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let events = report["result"][0]["runs"][0]["events"].as_u64().unwrap();

    let mut rdr = csv::Reader::from_path(&log_path).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&rows[0][1], "start");
    assert_eq!(rows.len() as u64, events + 1);
    let times: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}
