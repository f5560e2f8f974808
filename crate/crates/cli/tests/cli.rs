use std::fs;
use std::process::Command;

use floodlens_core::codebook::Codebook;
use floodlens_core::synth;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_floodlens");

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("RUST_LOG", "error").output().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["sample", "--n", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let out = run(&["sample", "--region", "/nonexistent.geojson", "--n", "5", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: "));
}

#[test]
fn sample_writes_csv_and_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let region = dir.path().join("region.geojson");
    fs::write(&region, synth::QUITO_REGION_GEOJSON).unwrap();
    let out_csv = dir.path().join("points.csv");
    let out = run(&[
        "sample",
        "--region",
        region.to_str().unwrap(),
        "--n",
        "20",
        "--seed",
        "42",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(&out_csv).unwrap();
    assert!(csv.starts_with("point_id,lat,lon,status,exclusion_reason,source_building_id\r\n"));
    assert_eq!(csv.lines().count(), 21);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("points.csv.run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["params"]["n"], 20);

    let stdout = run(&[
        "sample",
        "--region",
        region.to_str().unwrap(),
        "--n",
        "20",
        "--seed",
        "42",
    ]);
    assert_eq!(stdout.stdout, csv.as_bytes());
}

#[test]
fn refuses_to_overwrite_an_input() {
    let dir = tempfile::tempdir().unwrap();
    let region = dir.path().join("region.geojson");
    fs::write(&region, synth::QUITO_REGION_GEOJSON).unwrap();
    let r = region.to_str().unwrap();
    let out = run(&["sample", "--region", r, "--n", "5", "--seed", "1", "--out", r]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_to_string(&region).unwrap(), synth::QUITO_REGION_GEOJSON);
}

#[test]
fn codebook_version_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let region = dir.path().join("region.geojson");
    let footprints = dir.path().join("footprints.geojson");
    let codebook = dir.path().join("codebook.json");
    let other = dir.path().join("codebook_v3.json");
    fs::write(&region, synth::QUITO_REGION_GEOJSON).unwrap();
    fs::write(
        &footprints,
        floodlens_core::geo::write_footprints(&synth::quito_footprints()),
    )
    .unwrap();
    fs::write(&codebook, Codebook::quito().to_json()).unwrap();
    fs::write(
        &other,
        Codebook::quito()
            .to_json()
            .replace("\"version\": \"2.0\"", "\"version\": \"3.0\""),
    )
    .unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert!(run(&[
        "sample",
        "--region",
        &p("region.geojson"),
        "--n",
        "30",
        "--seed",
        "3",
        "--out",
        &p("pts.csv")
    ])
    .status
    .success());
    assert!(run(&[
        "relocate",
        "--points",
        &p("pts.csv"),
        "--footprints",
        &p("footprints.geojson"),
        "--out",
        &p("rel.csv")
    ])
    .status
    .success());
    let tasks = run(&[
        "tasks",
        "--points",
        &p("rel.csv"),
        "--codebook",
        &p("codebook.json"),
        "--seed",
        "3",
        "--raters",
        "a,b",
        "--batch-id",
        "t",
        "--image-url-template",
        "https://x/{point_id}",
        "--out",
        &p("tasks.csv"),
    ]);
    assert!(tasks.status.success(), "{}", String::from_utf8_lossy(&tasks.stderr));
    fs::write(dir.path().join("log.jsonl"), "").unwrap();
    let out = run(&[
        "kappa",
        "--batch",
        &p("tasks.csv"),
        "--codebook",
        &p("codebook_v3.json"),
        "--log",
        &p("log.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}
