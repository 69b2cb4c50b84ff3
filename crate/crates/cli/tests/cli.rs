use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccmtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccmtr"))
        .args(args)
        .env_remove("CC_SEED")
        .output()
        .expect("spawn ccmtr")
}

fn synth(dir: &Path, name: &str, n: usize, m: usize, dependence: f64) -> String {
    let path = dir.join(name);
    let out = ccmtr(&[
        "synth",
        "--n",
        &n.to_string(),
        "--m",
        &m.to_string(),
        "--dependence",
        &dependence.to_string(),
        "--seed",
        "7",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const RIDGE_CONFIG: &str = r#"{
  "dataset": "data.csv",
  "targets": ["t1", "t2"],
  "regressor": {"kind": "ridge", "l2": 0.001},
  "error_model": {"kind": "ridge", "l2": 0.001},
  "copulas": ["independent", "gumbel", "empirical"],
  "folds": 3,
  "seed": 11,
  "output_dir": "out"
}"#;

#[test]
fn synth_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), "d.csv", 100, 2, 0.5);
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x1,x2,x3,x4,x5,t1,t2");
    assert_eq!(lines.count(), 100);
}

#[test]
fn synth_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.csv", 50, 3, 0.3);
    let b = synth(dir.path(), "b.csv", 50, 3, 0.3);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn synth_rejects_full_dependence() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccmtr(&[
        "synth", "--n", "100", "--m", "2", "--dependence", "1.0", "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_rejects_bad_flag() {
    let out = ccmtr(&["synth", "--n", "ten", "--m", "2", "--dependence", "0", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 300, 2, 0.6);
    let cfg = write_config(dir.path(), RIDGE_CONFIG);
    let out = ccmtr(&["run", "--config", &cfg, "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_dir = dir.path().join("out");
    for artifact in ["report.json", "curves.csv", "plots/validity.svg", "plots/volumes.svg"] {
        assert!(out_dir.join(artifact).is_file(), "missing {artifact}");
    }
    let csv = fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "fold,copula,epsilon_g,coverage,median_volume_at_0.1");
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 20);

    let report = ccmtr(&["report", out_dir.join("report.json").to_str().unwrap()]);
    assert!(report.status.success());
    let table = String::from_utf8(report.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("independent"));
    assert!(rows[1].starts_with("gumbel"));
    assert!(rows[2].starts_with("empirical"));
}

#[test]
fn run_is_reproducible_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 200, 2, 0.6);
    let cfg = write_config(dir.path(), RIDGE_CONFIG);
    let curves = |out: &str, extra: &[&str]| {
        let mut args = vec!["run", "--config", &cfg, "--out", out];
        args.extend_from_slice(extra);
        let o = ccmtr(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(Path::new(out).join("curves.csv")).unwrap()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let first = curves(a.to_str().unwrap(), &[]);
    let second = curves(b.to_str().unwrap(), &["--jobs", "3"]);
    assert_eq!(first, second);
    let reseeded = curves(c.to_str().unwrap(), &["--seed", "12345"]);
    assert_ne!(first, reseeded);
}

#[test]
fn single_copula_report_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 120, 2, 0.0);
    let cfg = write_config(
        dir.path(),
        &RIDGE_CONFIG.replace(r#"["independent", "gumbel", "empirical"]"#, r#"["empirical"]"#),
    );
    assert!(ccmtr(&["run", "--config", &cfg]).status.success());
    let report = ccmtr(&["report", dir.path().join("out/report.json").to_str().unwrap()]);
    let table = String::from_utf8(report.stdout).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn invalid_copula_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 100, 2, 0.0);
    let cfg = write_config(dir.path(), &RIDGE_CONFIG.replace("\"gumbel\"", "\"clayton\""));
    let out = ccmtr(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clayton"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &RIDGE_CONFIG.replace("\"seed\"", "\"sede\""));
    let out = ccmtr(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RIDGE_CONFIG);
    let out = ccmtr(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_target_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 100, 2, 0.0);
    let cfg = write_config(dir.path(), &RIDGE_CONFIG.replace("\"t2\"", "\"t9\""));
    assert_eq!(ccmtr(&["run", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "data.csv", 20, 2, 0.0);
    // 20 rows cannot be split into 15 folds.
    let cfg = write_config(dir.path(), &RIDGE_CONFIG.replace("\"folds\": 3", "\"folds\": 15"));
    assert_eq!(ccmtr(&["run", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn malformed_report_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    fs::write(&path, "{ not json").unwrap();
    assert_eq!(ccmtr(&["report", path.to_str().unwrap()]).status.code(), Some(2));
}
