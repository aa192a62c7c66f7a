use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qrng_core::config::PipelineConfig;
use qrng_core::io::{read_bits_file, read_events_file};
use qrng_core::pipeline::{run, run_linospad, SimulatedFrames};
use serde_json::Value;

fn qrng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrng"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn randy_file_round_trip_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = dir.path().join("run");
    let o = qrng(&[
        "simulate",
        "--preset",
        "randy",
        "--duration",
        "0.3",
        "--seed",
        "5",
        "--out",
        path(&sim),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = json(&sim.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["files"]["events"], "events.bin");

    let o = qrng(&[
        "pipeline",
        "--config",
        path(&sim.join("manifest.json")),
        "--events",
        path(&sim.join("events.bin")),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut cfg = PipelineConfig::randy();
    cfg.sim.duration = 0.3;
    cfg.sim.seed = 5;
    let expected = run(&cfg).unwrap();
    assert_eq!(read_bits_file(&out.join("bits.bin")).unwrap().0, expected.bits);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["output_bits"], expected.bits.len() as u64);
    for f in [
        "report.json",
        "conditioning.json",
        "rates.json",
        "histogram.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn linospad_tag_round_trip_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = dir.path().join("run");
    let o = qrng(&[
        "simulate",
        "--preset",
        "linospad",
        "--frames",
        "40",
        "--out",
        path(&sim),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&sim.join("manifest.json"))["n_frames"], 40);

    let o = qrng(&[
        "pipeline",
        "--config",
        path(&sim.join("manifest.json")),
        "--tags",
        path(&sim.join("tags.bin")),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut cfg = PipelineConfig::linospad();
    cfg.sim.duration = 40.0 * cfg.array.as_ref().unwrap().frame_time;
    let expected = run_linospad(&cfg, &SimulatedFrames::new(&cfg)).unwrap();
    assert_eq!(read_bits_file(&out.join("bits.bin")).unwrap().0, expected.bits);
    let rates = json(&out.join("rates.json"));
    assert_eq!(rates["n_kept"], expected.summary.rates.unwrap().n_kept);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = qrng(&[
            "pipeline",
            "--duration",
            "0.2",
            "--seed",
            "9",
            "--raw",
            "--out",
            path(d),
        ]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    }
    for f in ["bits.bin", "sampled.bin", "summary.json", "histogram.csv"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn truncated_bit_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.bin");
    fs::write(&p, [0x51u8]).unwrap();
    let o = qrng(&["analyze", path(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("too short"), "{}", stderr(&o));
}

#[test]
fn zero_duration_writes_an_empty_event_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrng(&["simulate", "--duration", "0", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (events, tick) = read_events_file(&dir.path().join("events.bin")).unwrap();
    assert!(events.is_empty());
    assert_eq!(tick, 1e-9);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = serde_json::to_value(PipelineConfig::randy()).unwrap();
    cfg["detector"]["afterpulse_prob"] = serde_json::json!(1.5);
    let p = dir.path().join("cfg.json");
    fs::write(&p, cfg.to_string()).unwrap();
    let o = qrng(&["simulate", "--config", path(&p), "--out", path(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("detector.afterpulse_prob"), "{}", stderr(&o));

    let o = qrng(&["simulate", "--duration", "-1", "--out", path(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sim.duration"), "{}", stderr(&o));
}

#[test]
fn analyze_flags_the_raw_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qrng(&["pipeline", "--duration", "0.3", "--raw", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let raw = qrng(&["analyze", path(&out.join("sampled.bin")), "--max-lag", "20"]);
    assert_eq!(raw.status.code(), Some(1));
    assert!(stderr(&raw).contains("lags [1,"), "{}", stderr(&raw));

    let report = dir.path().join("report.json");
    let ok = qrng(&["analyze", path(&out.join("bits.bin")), "--out", path(&report)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert_eq!(json(&report)["pass"], true);
}

#[test]
fn rate_curve_writes_data_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrng(&[
        "rate-curve",
        "--rate",
        "2e5",
        "--points",
        "50",
        "--loss",
        "0.14",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("rate_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(fs::read_to_string(dir.path().join("rate_curve.gp"))
        .unwrap()
        .contains("rate_curve.csv"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("288539"));
}
