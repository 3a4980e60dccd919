//! End-to-end tests of the `wavewarp` binary.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wavewarp(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavewarp"))
        .args(args)
        .env("WAVEWARP_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn success(args: &[&str], out_dir: &Path) -> Value {
    let out = wavewarp(args, out_dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON summary on stdout")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn logistic(t: f64, c: f64) -> f64 {
    1.0 / (1.0 + (-250.0 * (t - c)).exp())
}

fn benchmark_value(t: f64) -> f64 {
    let phi = 40.0 * t + (8.0 * PI * t).cos() / (2.0 * PI);
    let a = logistic(t, 1.0 / 3.0) - logistic(t, 2.0 / 3.0);
    let b = logistic(t, 1.0 / 3.0);
    (2.0 * PI * phi).cos() + a * (4.0 * PI * phi).cos() + b * (6.0 * PI * phi).cos()
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) {
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn synth_in(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth"];
    args.extend_from_slice(extra);
    success(&args, dir.path());
    dir.path().join("benchmark.csv")
}

#[test]
fn synth_writes_one_row_per_sample() {
    let dir = TempDir::new().unwrap();
    let summary = success(&["synth", "--fs", "2000", "--duration", "0.5"], dir.path());
    assert_eq!(summary["command"], "synth");
    assert_eq!(summary["files"].as_array().unwrap().len(), 2);
    let (header, rows) = read_rows(&dir.path().join("benchmark.csv"));
    assert_eq!(header, ["t", "x"]);
    assert_eq!(rows.len(), 1000);
    let truth = read_json(&dir.path().join("benchmark_truth.json"));
    assert_eq!(truth["tool"], "wavewarp");
    assert_eq!(truth["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(truth["config"]["fs"], 2000.0);
}

#[test]
fn noiseless_synth_matches_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let path = synth_in(&dir, &["--snr", "inf"]);
    let (_, rows) = read_rows(&path);
    assert_eq!(rows.len(), 6000);
    for (n, row) in rows.iter().enumerate() {
        let t = n as f64 / 6000.0;
        assert!((row[0] - t).abs() < 1e-12);
        assert!((row[1] - benchmark_value(t)).abs() < 1e-12, "sample {n}");
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let pa = synth_in(&a, &["--snr", "10", "--seed", "7", "--random-phase"]);
    let pb = synth_in(&b, &["--snr", "10", "--seed", "7", "--random-phase"]);
    let pc = synth_in(&c, &["--snr", "10", "--seed", "8", "--random-phase"]);
    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(&pa), read(&pb));
    assert_ne!(read(&pa), read(&pc));
}

#[test]
fn analyze_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let input = synth_in(&dir, &["--snr", "20", "--seed", "3"]);
    let out = dir.path().join("run");
    let summary = success(
        &["analyze", input.to_str().unwrap(), "--out-dir", out.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(summary["command"], "analyze");
    for f in summary["files"].as_array().unwrap() {
        assert!(Path::new(f.as_str().unwrap()).exists(), "{f} missing");
    }
    for name in [
        "results.json",
        "cycles.csv",
        "aligned.csv",
        "wsf_1.csv",
        "spectrogram_before.csv",
        "spectrogram_before.png",
        "spectrogram_after.csv",
        "spectrogram_after.png",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let results = read_json(&out.join("results.json"));
    assert_eq!(results["tool"], "wavewarp");
    assert_eq!(results["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(results["fs"], 6000.0);
    assert_eq!(results["n_samples"], 6000);
    let k = results["k"].as_u64().unwrap() as usize;
    assert_eq!(results["wsfs"].as_array().unwrap().len(), k);
    assert_eq!(k, 3);
    let cps: Vec<f64> = results["change_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(cps.len(), 2);
    assert!((cps[0] - 1.0 / 3.0).abs() < 0.025 && (cps[1] - 2.0 / 3.0).abs() < 0.025, "{cps:?}");
    let (header, cycles) = read_rows(&out.join("cycles.csv"));
    assert_eq!(cycles.len(), results["labels"].as_array().unwrap().len());
    assert_eq!(header.len(), results["config"]["warp"]["samples_per_cycle"].as_u64().unwrap() as usize);
    let (wsf_header, wsf) = read_rows(&out.join("wsf_1.csv"));
    assert_eq!(wsf_header, ["phase", "median", "fitted"]);
    assert_eq!(wsf.len(), header.len());
}

#[test]
fn fixed_harmonic_is_echoed() {
    let dir = TempDir::new().unwrap();
    let input = synth_in(&dir, &["--snr", "20", "--fs", "3000"]);
    success(&["analyze", input.to_str().unwrap(), "--harmonic", "2"], dir.path());
    let results = read_json(&dir.path().join("results.json"));
    assert_eq!(results["config"]["warp"]["harmonic"], serde_json::json!({ "mode": "fixed", "value": 2 }));
    let per_iteration = results["harmonic_per_iteration"].as_array().unwrap();
    assert!(!per_iteration.is_empty());
    assert!(per_iteration.iter().all(|h| h == 2));
}

#[test]
fn zero_db_benchmark_change_points() {
    let dir = TempDir::new().unwrap();
    let input = synth_in(&dir, &["--snr", "0", "--seed", "1"]);
    success(&["analyze", input.to_str().unwrap()], dir.path());
    let results = read_json(&dir.path().join("results.json"));
    let cps: Vec<f64> = results["change_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(cps.len(), 2, "{cps:?}");
    assert!((cps[0] - 1.0 / 3.0).abs() < 0.03 && (cps[1] - 2.0 / 3.0).abs() < 0.03, "{cps:?}");
}

#[test]
fn constant_shape_gives_one_cluster() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tone.csv");
    let fs = 4000.0;
    write_csv(
        &input,
        "x",
        (0..4000).map(|n| {
            let t = n as f64 / fs;
            let phi = 30.0 * t + (6.0 * PI * t).cos() / (2.0 * PI);
            format!("{}", (2.0 * PI * phi).cos() + 0.6 * (4.0 * PI * phi).cos())
        }),
    );
    success(&["analyze", input.to_str().unwrap(), "--fs", "4000"], dir.path());
    let results = read_json(&dir.path().join("results.json"));
    assert_eq!(results["k"], 1);
    assert_eq!(results["change_points"].as_array().unwrap().len(), 0);
    assert_eq!(results["fs"], 4000.0);
}

#[test]
fn wav_input_carries_its_rate() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tone.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 3000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&input, spec).unwrap();
    for n in 0..3000 {
        let t = n as f64 / 3000.0;
        let phi = 25.0 * t + (4.0 * PI * t).cos() / (2.0 * PI);
        let x = 0.5 * (2.0 * PI * phi).cos() + 0.3 * (4.0 * PI * phi).cos();
        w.write_sample((x * 32767.0).round() as i16).unwrap();
    }
    w.finalize().unwrap();
    success(&["analyze", input.to_str().unwrap()], dir.path());
    let results = read_json(&dir.path().join("results.json"));
    assert_eq!(results["fs"], 3000.0);
    assert_eq!(results["n_samples"], 3000);
    assert_eq!(results["k"], 1);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = TempDir::new().unwrap();
    let input = synth_in(&dir, &["--snr", "30"]);
    let config = dir.path().join("config.json");
    let mut base: Value = read_json(&{
        success(&["analyze", input.to_str().unwrap(), "--k-max", "4"], dir.path());
        dir.path().join("results.json")
    })["config"]
        .clone();
    base["cluster"]["replicates"] = 7.into();
    std::fs::write(&config, base.to_string()).unwrap();
    let out = dir.path().join("second");
    success(
        &[
            "analyze",
            input.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--max-iterations",
            "2",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    let results = read_json(&out.join("results.json"));
    assert_eq!(results["config"]["cluster"]["replicates"], 7);
    assert_eq!(results["config"]["cluster"]["k_max"], 4);
    assert_eq!(results["config"]["warp"]["max_iterations"], 2);
    assert!(results["used_iterations"].as_u64().unwrap() <= 2);
}

#[test]
fn eval_writes_one_row_per_snr_and_iteration() {
    let dir = TempDir::new().unwrap();
    let summary = success(&["eval", "--realizations", "1"], dir.path());
    assert_eq!(summary["command"], "eval");
    let (header, rows) = read_rows(&dir.path().join("table1.csv"));
    assert_eq!(header[..2], ["snr_db", "iterations"]);
    assert_eq!(rows.len(), 9);
    let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    for snr in [30.0, 20.0, 10.0] {
        for it in 1..=3 {
            assert!(keys.contains(&(snr, it as f64)));
        }
    }
    let report = read_json(&dir.path().join("table1.json"));
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
}

fn failure(args: &[&str], dir: &Path, code: i32, kind: &str) {
    let out = wavewarp(args, dir);
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    let err: Value = serde_json::from_slice(&out.stderr).expect("JSON error on stderr");
    assert_eq!(err["kind"], kind);
    assert_eq!(err["exit_code"], code);
    assert_eq!(err["tool"], "wavewarp");
    assert!(!err["error"].as_str().unwrap().is_empty());
}

#[test]
fn errors_are_reported_with_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    failure(&["analyze", "--bogus"], d, 2, "usage");
    failure(&["frobnicate"], d, 2, "usage");
    failure(&["analyze", d.join("missing.csv").to_str().unwrap()], d, 3, "data");

    let short = d.join("short.csv");
    write_csv(&short, "t,x", (0..10).map(|n| format!("{},{}", n as f64 * 0.001, 0.0)));
    failure(&["analyze", short.to_str().unwrap()], d, 3, "data");

    let no_time = d.join("no_time.csv");
    write_csv(&no_time, "x", (0..200).map(|n| format!("{}", (n as f64).sin())));
    failure(&["analyze", no_time.to_str().unwrap()], d, 2, "usage");

    let garbage = d.join("garbage.csv");
    write_csv(&garbage, "t,x", (0..200).map(|n| format!("{n},abc")));
    failure(&["analyze", garbage.to_str().unwrap()], d, 3, "data");

    let input = synth_in(&dir, &["--fs", "1000", "--duration", "0.5"]);
    failure(&["analyze", input.to_str().unwrap(), "--harmonic", "zero"], d, 2, "usage");
    failure(&["analyze", input.to_str().unwrap(), "--k-max", "1"], d, 2, "usage");
    failure(&["synth", "--duration", "0"], d, 2, "usage");
}

#[test]
fn help_and_version_exit_cleanly() {
    let dir = TempDir::new().unwrap();
    let help = wavewarp(&["--help"], dir.path());
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("analyze"));
    let version = wavewarp(&["--version"], dir.path());
    assert!(version.status.success());
    assert!(String::from_utf8_lossy(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
}
