// The binary end to end: exit codes, artifacts, overrides.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depca-lab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().arg("--version").output().unwrap()), 0);
    assert_eq!(code(&bin().args(["solve", "--help"]).output().unwrap()), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bin().output().unwrap()), 1);
    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 1);
    assert_eq!(code(&run(&["solve"], dir.path())), 1);
    assert_eq!(
        code(&run(&["solve", "--config", "/nonexistent.json"], dir.path())),
        1
    );
    assert_eq!(code(&run(&["solve", "--window", "3"], dir.path())), 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"kind": "constant", "q": 1, "unknown": 2}"#).unwrap();
    let o = run(
        &["solve", "--config", bad.to_str().unwrap()],
        &dir.path().join("x"),
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown"));
}

#[test]
fn hypothesis_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "dichotomy",
            "--config",
            config("no_dichotomy.json").to_str().unwrap(),
        ],
        &dir.path().join("a"),
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        &[
            "lasota",
            "--config",
            config("lasota.json").to_str().unwrap(),
            "--gamma",
            "2.0",
            "--window=-100:100",
        ],
        &dir.path().join("b"),
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn solve_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "solve",
            "--config",
            config("scalar_bounded.json").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "solve");
    assert_eq!(
        manifest["artifacts"],
        serde_json::json!(["trajectory.csv", "summary.json"])
    );
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    for rec in rdr.records() {
        let x: f64 = rec.unwrap()[1].parse().unwrap();
        assert!((x - 2.0).abs() < 1e-7);
    }
}

#[test]
fn overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "solve",
            "--config",
            config("scalar_bounded.json").to_str().unwrap(),
            "--m",
            "4",
            "--window=-45:45",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv::Reader::from_path(dir.path().join("trajectory.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 90 * 4 + 1);
}

#[test]
fn oracle_check_runs_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["oracle-check", "--m", "20"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("max error"));
    assert!(dir.path().join("oracle.json").is_file());
}

#[test]
fn thread_count_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["oracle-check", "--m", "10", "--out"])
        .arg(dir.path())
        .env("DEPCA_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
