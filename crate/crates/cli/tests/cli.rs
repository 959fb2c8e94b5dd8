use std::path::Path;
use std::process::{Command, Output};

fn qmiset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmiset"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) {
    std::fs::write(dir.join("cfg.json"), body).unwrap();
}

const LOW_NOISE: &str = r#"{"noise_bound": 0.05, "tau0_grid": [0.9], "trials": 1}"#;

#[test]
fn stages_chain_through_json_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, LOW_NOISE);
    let gen = qmiset(d, &["generate", "--config", "cfg.json", "--seed", "4", "--out", "ds.json"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let ds: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ds.json")).unwrap()).unwrap();
    assert_eq!(ds["meta"]["seed"], 4);
    assert_eq!(ds["meta"]["tau0"], 0.9);

    let id = qmiset(d, &["identify", "--dataset", "ds.json", "--out", "sets.json"]);
    assert!(id.status.success(), "{}", String::from_utf8_lossy(&id.stderr));

    let an = qmiset(d, &["analyze", "--sets", "sets.json"]);
    assert!(an.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&an.stdout).unwrap();
    let dc = rep["consistent"]["AB"]["diameter"].as_f64().unwrap();
    let ds_ = rep["superset"]["AB"]["diameter"].as_f64().unwrap();
    assert!(dc > 0.0 && dc <= ds_, "consistent {dc} superset {ds_}");
    assert_eq!(rep["consistent"]["AB"]["equals_superset"], false);
}

#[test]
fn repeated_sweeps_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, LOW_NOISE);
    let args = |out: &'static str| {
        [
            "sweep", "--config", "cfg.json", "--method", "consistent", "--no-timing", "--parallel", "2", "--out", out,
        ]
    };
    let a = qmiset(d, &args("a.csv"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = qmiset(d, &args("b.csv"));
    assert!(b.status.success());
    let (a, b) = (std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(
        "tau0,method,trial,gamma,gamma_tr,epsilon,lambda_max_M_AB,lambda_max_M_CD,diam_AB,diam_CD,status,wall_ms\n"
    ));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn failed_cell_gives_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, r#"{"tau0_grid": [0.0], "trials": 1}"#);
    let out = qmiset(d, &["sweep", "--config", "cfg.json", "--method", "superset", "--format", "json", "--no-timing"]);
    assert_eq!(out.status.code(), Some(1));
    let recs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(recs[0]["status"], "infeasible");
    assert!(recs[0]["gamma"].is_null());
}

#[test]
fn invalid_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, r#"{"tau0_grid": [1.0]}"#);
    let out = qmiset(d, &["sweep", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau0"));
    let out = qmiset(d, &["sweep", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}
