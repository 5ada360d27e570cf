use std::path::Path;
use std::process::{Command, Output};

fn gelfand(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_gelfand"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn trace_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[problem]\ndomain = \"interval:128\"\n", &["trace", "--self-test"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let folds: serde_json::Value = serde_json::from_str(&read(dir.path(), "folds.json")).unwrap();
    assert_eq!(folds.as_array().unwrap().len(), 1);
    let mu = folds[0]["mu_fold"].as_f64().unwrap();
    assert!((mu - 3.5138).abs() < 5e-3, "{mu}");
    let events: serde_json::Value = serde_json::from_str(&read(dir.path(), "events.json")).unwrap();
    assert_eq!(events.as_array().unwrap().last().unwrap()["kind"], "mu_floor");
    assert!(read(dir.path(), "branch.csv").starts_with("s,mu,sup_norm,sigma1,morse_index\n"));
    assert!(dir.path().join("out/snapshots/point_00000.json").exists());
}

#[test]
fn invalid_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[continuation]\nmu_floor = 0.0\n", &["trace"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mu_floor"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[trace]\nsnapshots = false\n", &["trace"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshots"));
}

#[test]
fn empty_oracle_grid_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[oracle]\nb_grid = []\n", &["oracle"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b_grid"));
}

#[test]
fn oracle_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[problem]\ndomain = \"disk:16x32\"\n[oracle]\nb_grid = [1.0]\nmultistart_nodes = 9\nmultistart_starts = 100\nmultistart_mu = [1.0, 4.0]\n";
    let out = gelfand(dir.path(), cfg, &["oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let family = read(dir.path(), "oracle_family.csv");
    let row: Vec<f64> = family.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[1], 2.0);
    let fold: serde_json::Value = serde_json::from_str(&read(dir.path(), "oracle_fold.json")).unwrap();
    assert!((fold["mu_fold"].as_f64().unwrap() - 3.513831).abs() < 1e-5);
    let counts: Vec<String> = read(dir.path(), "oracle_multistart.csv").lines().skip(1).map(String::from).collect();
    assert!(counts[0].ends_with(",2") && counts[1].ends_with(",0"), "{counts:?}");
}

#[test]
fn shape_check_passes_on_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[problem]\ndomain = \"interval:128\"\n", &["shape-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "shape_report.json")).unwrap();
    assert!(report["report"]["observed_order"].as_f64().unwrap() > 0.9);
}

#[test]
fn shape_check_rejects_the_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "[problem]\ndomain = \"interval:64\"\n[shape]\nperturbation = \"zero\"\n", &["shape-check"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("out/error.json").exists());
}

#[test]
fn shape_check_threshold_miss_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[problem]\ndomain = \"interval:64\"\n[shape]\norder_threshold = 5.0\n";
    let out = gelfand(dir.path(), cfg, &["shape-check"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("out/shape_report.json").exists());
}

#[test]
fn generic_exp_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[problem]\ndomain = \"rect:10x10:1x1\"\n[experiment]\nn_samples = 3\n[trace]\nwrite_snapshots = false\n";
    let a = gelfand(dir.path(), cfg, &["generic-exp", "--seed", "11", "--jobs", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let first = read(dir.path(), "experiment.json");
    let b = gelfand(dir.path(), cfg, &["generic-exp", "--seed", "11", "--jobs", "1"]);
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(first, read(dir.path(), "experiment.json"));
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn spectrum_at_small_mu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[problem]\ndomain = \"rect:31x31:1x1\"\n[spectrum]\nmu = 0.0\ncount = 2\n";
    let out = gelfand(dir.path(), cfg, &["spectrum"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "spectrum.json")).unwrap();
    let sigma: Vec<f64> = doc["sigma"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((sigma[0] / (2.0 * pi2) - 1.0).abs() < 1e-2, "{sigma:?}");
    assert!((sigma[1] / (5.0 * pi2) - 1.0).abs() < 1e-2, "{sigma:?}");
    assert_eq!(doc["morse_index"], 0);
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = gelfand(dir.path(), "seed = 9\n", &["trace", "--dump-config"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("[continuation]"));
    assert!(!dir.path().join("out").exists());
}
