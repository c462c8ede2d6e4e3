use std::path::Path;
use std::process::{Command, Output};

fn atacom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atacom")).args(args).output().expect("binary runs")
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn validate_passes_on_defaults() {
    let out = atacom(&["validate"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 7, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn bad_config_exits_with_code_two() {
    let out = atacom(&["--set", "experiment.no_such_key=1", "validate"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[controller]\nbeta = -1.0\n").unwrap();
    let out = atacom(&["--config", bad.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = atacom(&["--config", "/nonexistent/run.toml", "validate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rollout_writes_csv_and_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("nav_rollout.toml");
    let out = atacom(&[
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "experiment.episodes=5",
        "rollout",
        "--safety",
        "off",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rollout.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("atacom-rollout/1,"));
    assert_eq!(lines.filter(|l| l.starts_with("episode,")).count(), 5);
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("safety = false"));
    assert!(resolved.contains("experiment.episodes=5"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("config.input.toml")).unwrap(),
        std::fs::read_to_string(cfg).unwrap()
    );
}

#[test]
fn saved_policy_without_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = atacom(&["rollout", "--policy", "saved", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
