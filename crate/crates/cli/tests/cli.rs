use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn samv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samv"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("run samv")
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_estimator_is_a_usage_error_listing_choices() {
    let out = samv(&[
        "estimate",
        &path(&configs().join("ula12_estimate.toml")),
        "--data",
        &path(&configs().join("data/three_source_snapshots.csv")),
        "-e",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("samv2") && err.contains("music"), "{err}");
}

#[test]
fn empty_data_file_is_rejected_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    std::fs::write(&data, "").unwrap();
    let out = samv(&[
        "estimate",
        &path(&configs().join("ula12_estimate.toml")),
        "--data",
        &path(&data),
        "-e",
        "samv2",
        "--out",
        &path(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = samv(&["simulate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_snapshots_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("three_source_scenario.toml"))
        .unwrap()
        .replace("snapshots = 120", "snapshots = 0");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = samv(&["simulate", &path(&cfg), "--out", &path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_matches_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&configs().join("three_source_scenario.toml"));
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = samv(&["simulate", &cfg, "--out", &path(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read_to_string(out_dir.join("snapshots.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    // Version line, header, then 12 sensors x 120 snapshots.
    assert_eq!(files[0].lines().count(), 2 + 12 * 120);
    let fixture = std::fs::read_to_string(configs().join("data/three_source_snapshots.csv")).unwrap();
    assert_eq!(files[0], fixture);
}

#[test]
fn estimate_writes_three_peaks_for_the_three_source_scene() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = samv(&[
        "estimate",
        &path(&configs().join("ula12_estimate.toml")),
        "--data",
        &path(&configs().join("data/three_source_snapshots.csv")),
        "-e",
        "samv2",
        "--out",
        &path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let peaks = std::fs::read_to_string(out_dir.join("peaks.csv")).unwrap();
    let rows: Vec<f64> = peaks
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    for truth in [35.11, 50.15, 55.05] {
        assert!(rows.iter().any(|a| (a - truth).abs() <= 0.2 + 1e-9), "{rows:?}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["estimator"], "samv2");
}

#[test]
fn selftest_passes() {
    let out = samv(&["selftest", "--instances", "20"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn replay_detects_a_changed_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::copy(configs().join("data/three_source_snapshots.csv"), &data).unwrap();
    let run = dir.path().join("run");
    let out = samv(&[
        "estimate",
        &path(&configs().join("ula12_estimate.toml")),
        "--data",
        &path(&data),
        "-e",
        "per",
        "--out",
        &path(&run),
    ]);
    assert!(out.status.success());
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push('\n');
    std::fs::write(&data, text).unwrap();
    let out = samv(&[
        "replay",
        &path(&run.join("manifest.json")),
        "--out",
        &path(&dir.path().join("again")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
