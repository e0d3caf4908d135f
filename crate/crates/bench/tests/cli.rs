use std::fs;
use std::process::{Command, Output};

use parasgd_bench::{parse_csv, CSV_HEADER};

fn parasgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parasgd"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 8] = [
    "--arch",
    "adult-dnn",
    "--dataset",
    "synthetic:300:123:2",
    "--epochs",
    "2",
    "--batch-size",
    "32",
];

#[test]
fn single_point_sweep_has_unit_speedup() {
    let mut args = vec!["bench", "--procs", "1"];
    args.extend(SMALL);
    let out = parasgd(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    let records = parse_csv(&text).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].speedup, 1.0);
    assert_eq!(records[0].bytes, 0);
}

#[test]
fn tcp_sweep_spawns_workers() {
    let mut args = vec![
        "bench",
        "--procs",
        "1,2",
        "--transport",
        "tcp",
        "--deterministic",
    ];
    args.extend(SMALL);
    let out = parasgd(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(records.iter().map(|r| r.p).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(records[1].epochs, 2);
    assert!(records[1].bytes > 0);
}

#[test]
fn refuses_to_overwrite_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    fs::write(&path, "keep").unwrap();
    let p = path.to_str().unwrap();
    let mut args = vec!["bench", "--procs", "1", "--out", p];
    args.extend(SMALL);
    let out = parasgd(&args);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_to_string(&path).unwrap(), "keep");
    args.push("--force");
    assert!(parasgd(&args).status.success());
    assert!(fs::read_to_string(&path).unwrap().starts_with(CSV_HEADER));
}

#[test]
fn exit_codes() {
    assert_eq!(parasgd(&["bench", "--no-such-flag"]).status.code(), Some(1));
    let missing = parasgd(&[
        "train",
        "--arch",
        "mnist-dnn",
        "--dataset",
        "mnist",
        "--data-dir",
        "/nonexistent",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    let mismatch = parasgd(&[
        "train",
        "--arch",
        "mnist-dnn",
        "--dataset",
        "synthetic:50:3:2",
    ]);
    assert_eq!(mismatch.status.code(), Some(3));
    let bad_sweep = parasgd(&["bench", "--arch", "adult-dnn", "--procs", "2,1"]);
    assert_eq!(bad_sweep.status.code(), Some(1));
}

#[test]
fn train_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("w.bin");
    let mut args = vec![
        "train",
        "--procs",
        "2",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ];
    args.extend(SMALL);
    let out = parasgd(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("procs=2 epochs=2 "), "{line}");
    let arch = parasgd_core::build_architecture("adult-dnn").unwrap();
    let mut f = fs::File::open(&ckpt).unwrap();
    let (tag, flat) = parasgd_core::model::read_checkpoint(&mut f).unwrap();
    assert_eq!(tag, "adult-dnn");
    assert_eq!(flat.len(), arch.param_count());
}

#[test]
fn perfmodel_joins_measured_times() {
    let dir = tempfile::tempdir().unwrap();
    let measured = dir.path().join("m.csv");
    fs::write(
        &measured,
        format!("{CSV_HEADER}\n1,4,2,,0,1\n2,3,2,,10,1.3333\n"),
    )
    .unwrap();
    let out = parasgd(&[
        "perfmodel",
        "--arch",
        "mnist-dnn",
        "--dataset",
        "mnist",
        "--procs",
        "1,2,4",
        "--flop-rate",
        "1e9",
        "--bandwidth",
        "1e9",
        "--latency",
        "1e-6",
        "--measured",
        measured.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let row1: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row1[0], "1");
    assert_eq!(row1[2], "2");
    assert_eq!(row1[3], "1");
    let row2: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row2[2], "1.5");
    assert_eq!(row2[4], "1.3333333333333333");
    let row4: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(row4[2], "");
}
