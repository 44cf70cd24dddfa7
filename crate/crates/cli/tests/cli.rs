use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use stream_tsne::metrics::CSV_HEADER;
use stream_tsne_cli::{execute, Cli, SnapshotFile};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stream-tsne"))
}

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("stream-tsne").chain(args.iter().copied())).unwrap()
}

fn snapshot_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("snapshot_"))
        .collect();
    names.sort();
    names
}

#[test]
fn missing_source_is_a_usage_error() {
    let out = bin().args(["run", "--total", "100"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--blobs", "3", "--batch-size", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,x\n").unwrap();
    let out = bin().arg("run").arg("--input").arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn eight_row_file_gives_one_opening_and_one_partial() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let rows: String = (0..8).map(|i| format!("{},{},{}\n", i, (i * i) % 5, i % 3)).collect();
    fs::write(&data, rows).unwrap();
    let out = dir.path().join("out");
    let summary = execute(parse(&[
        "run",
        "--input",
        data.to_str().unwrap(),
        "--batch-size",
        "4",
        "--pedrul",
        "2",
        "--slice",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]))
    .unwrap();
    let ts: Vec<u64> = summary.metrics.series().iter().map(|m| m.t).collect();
    assert_eq!(ts, vec![1, 2]);
    assert_eq!(snapshot_files(&out), vec!["snapshot_00001.json", "snapshot_00002.json"]);
    let last = SnapshotFile::parse(&fs::read_to_string(out.join("snapshot_00002.json")).unwrap()).unwrap();
    assert!(!last.anchors.is_empty() && last.anchors.len() <= 2);
}

#[test]
fn snapshots_round_trip_and_metrics_keep_their_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let summary = execute(parse(&[
        "run", "--blobs", "3", "--total", "900", "--batch-size", "150", "--pedrul", "60", "--slice", "0.2",
        "--fit-iters", "100,150", "--seed", "2", "--out", out,
    ]))
    .unwrap();
    assert!(!summary.snapshots.is_empty());
    for path in &summary.snapshots {
        let text = fs::read_to_string(path).unwrap();
        let snap = SnapshotFile::parse(&text).unwrap();
        assert_eq!(SnapshotFile::parse(&snap.to_json()).unwrap(), snap);
        assert_eq!(snap.config_hash, summary.config_hash);
    }
    let csv = fs::read_to_string(&summary.metrics_path).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), summary.metrics.len() + 1);
}

#[test]
fn snapshot_every_thins_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let summary = execute(parse(&[
        "run", "--blobs", "2", "--total", "600", "--batch-size", "100", "--pedrul", "40", "--slice", "0.2",
        "--fit-iters", "50,50", "--partial-iters", "20", "--snapshot-every", "2", "--out", out,
    ]))
    .unwrap();
    let expected: Vec<String> = summary
        .metrics
        .series()
        .iter()
        .filter(|m| m.t % 2 == 0)
        .map(|m| SnapshotFile::file_name(m.t))
        .collect();
    assert_eq!(snapshot_files(dir.path()), expected);
}

#[test]
fn baseline_refuses_large_streams() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["baseline", "--synthetic-drift", "--total", "30000", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
}

#[test]
fn baseline_reprojects_every_batch_and_repeats_itself() {
    let metrics = |dir: &Path| {
        execute(parse(&[
            "baseline", "--blobs", "5", "--total", "2000", "--batch-size", "400", "--fit-iters", "20,20", "--seed",
            "4", "--no-timing", "--out", dir.to_str().unwrap(),
        ]))
        .unwrap();
        fs::read_to_string(dir.join("metrics.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = metrics(a.path());
    assert_eq!(first, metrics(b.path()));
    let anchors: Vec<usize> =
        first.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert_eq!(anchors, vec![400, 800, 1200, 1600, 2000]);
}
