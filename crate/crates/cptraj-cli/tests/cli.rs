//! End-to-end tests of the `cptraj` binary: generation, calibration,
//! checkpoint/resume, reporting, exit codes, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cptraj"))
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "seed": 5,
  "stream": {"horizons": 4, "trajectories": 6, "length": 60, "sequences": 2, "seed": 5,
             "hidden_state_forecasts": true},
  "calibrator": {"eta": 0.01, "big_d": 0.5},
  "eval": {"methods": ["cptraj", "aci"], "miscoverage_rates": [0.1, 0.5], "mc_samples": 1000}
}"#,
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawn cptraj");
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(cmd: &mut Command, expected_code: i32) -> Output {
    let output = cmd.output().expect("spawn cptraj");
    assert_eq!(
        output.status.code(),
        Some(expected_code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().to_string(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn generate_writes_streams_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("streams");

    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );

    for i in 0..2 {
        let path = out.join(format!("markov-{i}.jsonl"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 60, "stream {i} length");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["config_digest"].as_str().unwrap().len() == 64);

    // Same config, same bytes.
    let out2 = dir.path().join("streams2");
    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out2),
    );
    let a = std::fs::read(out.join("markov-0.jsonl")).unwrap();
    let b = std::fs::read(out2.join("markov-0.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generate_creates_nested_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("deep/nested/streams");
    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    assert!(out.join("markov-0.jsonl").exists());
}

#[test]
fn generate_rejects_invalid_mixing_probability() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"stream": {"stay_prob": 1.5}}"#).unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("stay_prob"),
        "stderr must name the field: {stderr}"
    );
}

#[test]
fn generate_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"stream": {"lenght": 10}}"#).unwrap();
    run_err(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join("x")),
        1,
    );
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    run_err(&mut bin(), 1);
}

fn generate_and_calibrate(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let config = small_config(dir);
    let streams = dir.join("streams");
    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&streams),
    );
    let records = dir.join("records");
    let mut cmd = bin();
    cmd.arg("calibrate")
        .arg(streams.join("markov-0.jsonl"))
        .arg(streams.join("markov-1.jsonl"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&records);
    cmd.args(extra);
    run_ok(&mut cmd);
    (records, config)
}

#[test]
fn calibrate_writes_per_rate_record_files() {
    let dir = tempfile::tempdir().unwrap();
    let (records, _) = generate_and_calibrate(dir.path(), &[]);

    for stream in ["markov-0", "markov-1"] {
        for method in ["cptraj", "aci"] {
            for rate in ["0.1", "0.5"] {
                let path = records.join(format!("{stream}-{method}-r{rate}.records.jsonl"));
                assert!(path.exists(), "missing {}", path.display());
                let text = std::fs::read_to_string(&path).unwrap();
                assert!(!text.is_empty());
                for line in text.lines() {
                    let v: serde_json::Value = serde_json::from_str(line).unwrap();
                    assert_eq!(v["rate"].as_f64().unwrap().to_string(), *rate);
                }
            }
        }
    }
    assert!(records.join("manifest.json").exists());
}

#[test]
fn calibrate_parallel_matches_serial() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (serial, _) = generate_and_calibrate(dir_a.path(), &[]);
    let (parallel, _) = generate_and_calibrate(dir_b.path(), &["--parallel", "4"]);
    // Manifests embed absolute paths; every data file must match exactly.
    let filter = |d: &Path| {
        dir_bytes(d)
            .into_iter()
            .filter(|(n, _)| n != "manifest.json")
            .collect::<Vec<_>>()
    };
    assert_eq!(filter(&serial), filter(&parallel));
}

#[test]
fn calibrate_method_and_rate_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (records, _) =
        generate_and_calibrate(dir.path(), &["--method", "cptraj-rs", "--rates", "0.2,0.4"]);
    assert!(records
        .join("markov-0-cptraj_rs-r0.2.records.jsonl")
        .exists());
    assert!(records
        .join("markov-0-cptraj_rs-r0.4.records.jsonl")
        .exists());
    assert!(!records.join("markov-0-cptraj-r0.1.records.jsonl").exists());
}

#[test]
fn calibrate_self_check_reduction_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = generate_and_calibrate(dir.path(), &["--self-check-reduction"]);
}

#[test]
fn calibrate_resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let streams = dir.path().join("streams");
    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&streams),
    );

    let full = dir.path().join("full");
    run_ok(
        bin()
            .arg("calibrate")
            .arg(streams.join("markov-0.jsonl"))
            .arg(streams.join("markov-1.jsonl"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&full),
    );

    // Interrupt after 70 of the 240 unit steps, then resume.
    let partial = dir.path().join("partial");
    let out = run_ok(
        bin()
            .arg("calibrate")
            .arg(streams.join("markov-0.jsonl"))
            .arg(streams.join("markov-1.jsonl"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&partial)
            .args(["--stop-after", "70"]),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("checkpoint written"));
    let checkpoint = partial.join("checkpoint.json");
    assert!(checkpoint.exists());
    assert!(
        !partial.join("markov-0-cptraj-r0.1.records.jsonl").exists(),
        "no records should be written before completion"
    );

    run_ok(
        bin()
            .arg("calibrate")
            .arg(streams.join("markov-0.jsonl"))
            .arg(streams.join("markov-1.jsonl"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&partial)
            .arg("--resume")
            .arg(&checkpoint),
    );

    let full_files: Vec<(String, Vec<u8>)> = dir_bytes(&full)
        .into_iter()
        .filter(|(name, _)| name.ends_with(".records.jsonl"))
        .collect();
    let resumed_files: Vec<(String, Vec<u8>)> = dir_bytes(&partial)
        .into_iter()
        .filter(|(name, _)| name.ends_with(".records.jsonl"))
        .collect();
    assert_eq!(
        full_files, resumed_files,
        "resumed records must be bit-exact"
    );
}

#[test]
fn calibrate_rejects_checkpoint_from_other_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let streams = dir.path().join("streams");
    run_ok(
        bin()
            .args(["generate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&streams),
    );
    let out_dir = dir.path().join("records");
    run_ok(
        bin()
            .arg("calibrate")
            .arg(streams.join("markov-0.jsonl"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out_dir)
            .args(["--stop-after", "10"]),
    );
    run_err(
        bin()
            .arg("calibrate")
            .arg(streams.join("markov-0.jsonl"))
            .arg("--config")
            .arg(&config)
            .arg("--seed")
            .arg("99")
            .arg("--out")
            .arg(&out_dir)
            .arg("--resume")
            .arg(out_dir.join("checkpoint.json")),
        1,
    );
}

#[test]
fn report_renders_tables_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (records, _) = generate_and_calibrate(dir.path(), &[]);

    let report_a = dir.path().join("report-a");
    let report_b = dir.path().join("report-b");
    run_ok(
        bin()
            .arg("report")
            .arg(&records)
            .arg("--out")
            .arg(&report_a),
    );
    run_ok(
        bin()
            .arg("report")
            .arg(&records)
            .arg("--out")
            .arg(&report_b),
    );

    for name in [
        "markov-0-cptraj-cs.csv",
        "markov-0-cptraj-width.csv",
        "markov-0-cptraj-coverage90.csv",
        "markov-0-cptraj-hcs-quartiles.csv",
        "markov-1-aci-cs.csv",
        "summary.json",
    ] {
        assert!(report_a.join(name).exists(), "missing {name}");
    }
    let filter = |d: &Path| {
        dir_bytes(d)
            .into_iter()
            .filter(|(n, _)| n != "manifest.json")
            .collect::<Vec<_>>()
    };
    assert_eq!(filter(&report_a), filter(&report_b));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_a.join("summary.json")).unwrap())
            .unwrap();
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
}

#[test]
fn report_rejects_empty_and_corrupt_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    run_err(
        bin()
            .arg("report")
            .arg(&empty)
            .arg("--out")
            .arg(dir.path().join("r")),
        2,
    );

    let corrupt = dir.path().join("corrupt");
    std::fs::create_dir_all(&corrupt).unwrap();
    let bad = corrupt.join("s-cptraj-r0.1.records.jsonl");
    std::fs::write(&bad, "this is not json\n").unwrap();
    let out = run_err(
        bin()
            .arg("report")
            .arg(&corrupt)
            .arg("--out")
            .arg(dir.path().join("r2")),
        2,
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("s-cptraj-r0.1.records.jsonl"),
        "error must cite the file: {stderr}"
    );
}

#[test]
fn full_pipeline_is_byte_deterministic() {
    let run_pipeline = |root: &Path| {
        let config = small_config(root);
        let streams = root.join("streams");
        run_ok(
            bin()
                .args(["generate", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&streams),
        );
        let records = root.join("records");
        run_ok(
            bin()
                .arg("calibrate")
                .arg(streams.join("markov-0.jsonl"))
                .arg(streams.join("markov-1.jsonl"))
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&records),
        );
        let report = root.join("report");
        run_ok(bin().arg("report").arg(&records).arg("--out").arg(&report));
        report
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let report_a = run_pipeline(dir_a.path());
    let report_b = run_pipeline(dir_b.path());
    let filter = |d: &Path| {
        dir_bytes(d)
            .into_iter()
            .filter(|(n, _)| n != "manifest.json")
            .collect::<Vec<_>>()
    };
    assert_eq!(filter(&report_a), filter(&report_b));
}
