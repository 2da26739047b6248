use std::path::PathBuf;
use std::process::{Command, Output};

fn config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn gstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gstar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_measure_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"sigma_file": "nope.csv", "w_file": "nope.csv"}"#).unwrap();
    let o = gstar(&["--config", path.to_str().unwrap(), "constants"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(
        &path,
        r#"{"kernel": {"n": 1, "lambda": 2.5, "alpha": 1.0}}"#,
    )
    .unwrap();
    let o = gstar(&["--config", path.to_str().unwrap(), "check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kernel"), "{}", stderr(&o));

    let o = gstar(&[
        "--config",
        config().to_str().unwrap(),
        "--only",
        "FOO",
        "check",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FOO") && stderr(&o).contains("E41"));
}

#[test]
fn selected_checks_are_reproducible_across_threads() {
    let cfg = config();
    let run = |threads: &str| {
        let o = gstar(&[
            "--config",
            cfg.to_str().unwrap(),
            "--only",
            "E41,E42",
            "--seed",
            "42",
            "--threads",
            threads,
            "check",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o.stdout
    };
    let one = run("1");
    let four = run("4");
    assert_eq!(one, four);
    let reports: serde_json::Value = serde_json::from_slice(&one).unwrap();
    let ids: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["E41", "E42"]);
}

#[test]
fn failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(
        &path,
        r#"{"checks": [{"id": "ELLD", "instances": 5, "cap": 1e-9}]}"#,
    )
    .unwrap();
    let o = gstar(&["--config", path.to_str().unwrap(), "check"]);
    assert_eq!(o.status.code(), Some(1));
    let reports: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(reports[0]["pass"], false);
}

#[test]
fn constants_writes_report_and_trees() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let trees = dir.path().join("trees.json");
    let o = gstar(&[
        "--config",
        config().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dump-tree",
        trees.to_str().unwrap(),
        "constants",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let n = report["n_norm"].as_f64().unwrap();
    let sqrt_b = report["sqrt_b"].as_f64().unwrap();
    assert!(n > 0.0 && sqrt_b > 0.0 && sqrt_b <= n * 1.001);
    let trees: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&trees).unwrap()).unwrap();
    assert!(!trees.as_array().unwrap().is_empty());
}

#[test]
fn sweep_and_grid_stats_are_csv() {
    let o = gstar(&["--config", config().to_str().unwrap(), "sweep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().contains("invalid"));

    let o = gstar(&["grid-stats", "--samples", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("level,index,probability,halfwidth,samples"));
}
