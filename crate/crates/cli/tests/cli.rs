use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/corpus20");

fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for e in fs::read_dir(FIXTURE).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            fs::copy(e.path(), dir.path().join(e.file_name())).unwrap();
        }
    }
    dir
}

fn icdc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icdc"))
        .current_dir(dir)
        .args(["--config", "config.json"])
        .args(args)
        .env_remove("ICDC_RUNS_DIR")
        .env_remove("ICDC_NOTES")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = fixture_copy();
    let o = icdc(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["ingest", "bands", "report", "serve"] {
        assert!(stdout(&o).contains(cmd));
    }
    assert_eq!(icdc(dir.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn missing_upstream_exits_two() {
    let dir = fixture_copy();
    let o = icdc(dir.path(), &["--run", "x", "weights"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("run sectionize first"));
}

#[test]
fn validation_errors_exit_one() {
    let dir = fixture_copy();
    let o = icdc(dir.path(), &["--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = icdc(dir.path(), &["--stage", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("valid stages"));

    let o = icdc(dir.path(), &["report", "confusion"]);
    assert_eq!(o.status.code(), Some(1));
    for k in ["thresholds", "bands", "metrics", "interpretation"] {
        assert!(stderr(&o).contains(k), "{}", stderr(&o));
    }

    let cfg = fs::read_to_string(dir.path().join("config.json")).unwrap();
    let bad: serde_json::Value = serde_json::from_str(&cfg).unwrap();
    let mut bad = bad.as_object().unwrap().clone();
    bad.insert("band_edges".into(), serde_json::json!([0, 2]));
    fs::write(dir.path().join("config.json"), serde_json::to_string(&bad).unwrap()).unwrap();
    let o = icdc(dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    assert!(!dir.path().join("runs").exists());

    let o = icdc(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn full_chain_then_reports_and_skip() {
    let dir = fixture_copy();
    let o = icdc(dir.path(), &["--run", "r", "--stage", "all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("run r\n"));
    assert_eq!(out.matches(": wrote ").count(), 8, "{out}");

    let o = icdc(dir.path(), &["--run", "r", "report", "bands"]);
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["band", "count_1", "count_0", "share", "impurity", "faulty"]);
    let faulty: Vec<&str> = table
        .lines()
        .filter(|l| l.ends_with("yes"))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(faulty, ["2.5-3"]);

    let o = icdc(dir.path(), &["--run", "r", "report", "interpretation", "--doc", "1016"]);
    assert!(stdout(&o).contains("flagged for review: yes"));
    let o = icdc(dir.path(), &["--run", "r", "report", "thresholds"]);
    assert!(stdout(&o).lines().count() > 1);

    let o = icdc(dir.path(), &["--run", "r", "bands"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("bands: unchanged, skipped"));

    let o = icdc(dir.path(), &["--run", "nope", "report", "bands"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn default_run_id_follows_config() {
    let dir = fixture_copy();
    let a = stdout(&icdc(dir.path(), &["ingest"]));
    let b = stdout(&icdc(dir.path(), &["ingest"]));
    let c = stdout(&icdc(dir.path(), &["--seed", "3", "ingest"]));
    let first = |s: &str| s.lines().next().unwrap().to_string();
    assert_eq!(first(&a), first(&b));
    assert_ne!(first(&a), first(&c));
    assert!(first(&a).starts_with("run run-"));
}
