//! Subcommand implementations.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cptraj_core::eval::{EvalRecord, Method, MethodRun, RunOutput};
use cptraj_core::sim::{generate_sequence, load_stream, write_stream, StreamRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::manifest::Manifest;
use crate::CliError;

pub fn generate(config: &FileConfig, out_dir: &Path) -> Result<(), CliError> {
    let expected: Vec<PathBuf> = (0..config.stream.sequences)
        .map(|i| out_dir.join(format!("markov-{i}.jsonl")))
        .collect();
    Manifest::new(
        &config.canonical_json(),
        config.seed,
        expected.clone(),
        out_dir,
    )
    .write(out_dir)?;

    for (i, path) in expected.iter().enumerate() {
        let records = generate_sequence(&config.stream, i).map_err(CliError::from_config_error)?;
        write_stream(&records, path)
            .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        println!("wrote {} ({} records)", path.display(), records.len());
    }
    Ok(())
}

/// One (stream, method) work unit of a calibrate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Unit {
    stream_path: PathBuf,
    stream_name: String,
    method: Method,
    progress: Progress,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Progress {
    Pending,
    Running(MethodRun),
    Done(Vec<EvalRecord>),
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config_digest: String,
    units: Vec<Unit>,
}

pub struct CalibrateOptions {
    pub parallel: usize,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: Option<u64>,
    pub stop_after: Option<u64>,
    pub self_check_reduction: bool,
}

pub fn calibrate(
    config: &FileConfig,
    stream_paths: &[PathBuf],
    out_dir: &Path,
    options: &CalibrateOptions,
) -> Result<(), CliError> {
    if stream_paths.is_empty() {
        return Err(CliError::config(
            "calibrate requires at least one stream file",
        ));
    }
    let config_json = config.canonical_json();
    Manifest::new(&config_json, config.seed, stream_paths.to_vec(), out_dir).write(out_dir)?;
    let digest = crate::manifest::digest(&config_json);

    let streams = load_streams(stream_paths)?;

    if options.self_check_reduction {
        self_check_reduction(config, &streams)?;
        println!("reduction self-check passed");
    }

    let mut units = match &options.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| {
                CliError::data(format!("invalid checkpoint {}: {e}", path.display()))
            })?;
            if checkpoint.config_digest != digest {
                return Err(CliError::config(
                    "checkpoint was produced by a different configuration",
                ));
            }
            checkpoint.units
        }
        None => {
            let mut units = Vec::new();
            for path in stream_paths {
                for &method in &config.eval.methods {
                    units.push(Unit {
                        stream_path: path.clone(),
                        stream_name: stream_stem(path),
                        method,
                        progress: Progress::Pending,
                    });
                }
            }
            units
        }
    };

    let serial = options.checkpoint_every.is_some()
        || options.stop_after.is_some()
        || options.resume.is_some();
    if serial {
        run_serial(config, &streams, &mut units, out_dir, options, &digest)?;
    } else {
        run_parallel(config, &streams, &mut units, options.parallel)?;
    }

    let done = units
        .iter()
        .all(|u| matches!(u.progress, Progress::Done(_)));
    if !done {
        // A --stop-after budget ran out; the checkpoint has been written.
        return Ok(());
    }
    write_records(&units, config, out_dir)
}

fn load_streams(paths: &[PathBuf]) -> Result<BTreeMap<PathBuf, Vec<StreamRecord>>, CliError> {
    let mut streams = BTreeMap::new();
    for path in paths {
        let records =
            load_stream(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        streams.insert(path.clone(), records);
    }
    Ok(streams)
}

fn stream_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    name.trim_end_matches(".gz")
        .trim_end_matches(".jsonl")
        .to_string()
}

fn unit_shape(stream: &[StreamRecord]) -> (usize, usize) {
    let horizons = stream
        .first()
        .and_then(|r| r.ensemble.first())
        .map_or(0, Vec::len);
    let dim = stream.first().map_or(1, |r| r.y.len());
    (horizons, dim)
}

fn run_parallel(
    config: &FileConfig,
    streams: &BTreeMap<PathBuf, Vec<StreamRecord>>,
    units: &mut [Unit],
    parallel: usize,
) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<EvalRecord>, CliError>> = pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                let stream = &streams[&unit.stream_path];
                cptraj_core::eval::run_method(stream, &config.run_config(unit.method))
                    .map_err(CliError::from_run_error)
            })
            .collect()
    });
    for (unit, result) in units.iter_mut().zip(results) {
        unit.progress = Progress::Done(result?);
    }
    Ok(())
}

fn run_serial(
    config: &FileConfig,
    streams: &BTreeMap<PathBuf, Vec<StreamRecord>>,
    units: &mut [Unit],
    out_dir: &Path,
    options: &CalibrateOptions,
    digest: &str,
) -> Result<(), CliError> {
    let mut budget = options.stop_after;
    let checkpoint_path = out_dir.join("checkpoint.json");
    let mut steps_since_checkpoint = 0u64;

    for i in 0..units.len() {
        loop {
            let unit = &mut units[i];
            let stream = &streams[&unit.stream_path];
            match std::mem::replace(&mut unit.progress, Progress::Pending) {
                Progress::Done(records) => {
                    unit.progress = Progress::Done(records);
                    break;
                }
                Progress::Pending => {
                    let (horizons, dim) = unit_shape(stream);
                    let run = MethodRun::new(config.run_config(unit.method), horizons, dim)
                        .map_err(CliError::from_config_error)?;
                    unit.progress = Progress::Running(run);
                }
                Progress::Running(mut run) => {
                    let next = run.next_t();
                    let total = stream.len() as u64;
                    if next > total {
                        unit.progress = Progress::Done(run.into_records());
                        continue;
                    }
                    if budget == Some(0) {
                        unit.progress = Progress::Running(run);
                        write_checkpoint(&checkpoint_path, digest, units)?;
                        println!(
                            "budget exhausted; checkpoint written to {}",
                            checkpoint_path.display()
                        );
                        return Ok(());
                    }
                    run.step(&stream[(next - 1) as usize], None)
                        .map_err(CliError::from_run_error)?;
                    if let Some(b) = budget.as_mut() {
                        *b -= 1;
                    }
                    steps_since_checkpoint += 1;
                    let due = options
                        .checkpoint_every
                        .is_some_and(|every| steps_since_checkpoint >= every);
                    unit.progress = Progress::Running(run);
                    if due {
                        steps_since_checkpoint = 0;
                        write_checkpoint(&checkpoint_path, digest, units)?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn write_checkpoint(path: &Path, digest: &str, units: &[Unit]) -> Result<(), CliError> {
    let checkpoint = Checkpoint {
        config_digest: digest.to_string(),
        units: units.to_vec(),
    };
    let json = serde_json::to_string(&checkpoint)
        .map_err(|e| CliError::internal(format!("checkpoint serialization: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_records(units: &[Unit], config: &FileConfig, out_dir: &Path) -> Result<(), CliError> {
    for unit in units {
        let Progress::Done(records) = &unit.progress else {
            return Err(CliError::internal("unit not finished at write time"));
        };
        for &rate in &config.eval.miscoverage_rates {
            let path = out_dir.join(format!(
                "{}-{}-r{rate}.records.jsonl",
                unit.stream_name,
                unit.method.name()
            ));
            let file = std::fs::File::create(&path)
                .map_err(|e| CliError::data(format!("cannot create {}: {e}", path.display())))?;
            let mut sink = BufWriter::new(file);
            for record in records
                .iter()
                .filter(|r| r.rate.to_bits() == rate.to_bits())
            {
                serde_json::to_writer(&mut sink, record)
                    .map_err(|e| CliError::internal(format!("record serialization: {e}")))?;
                sink.write_all(b"\n")
                    .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
            }
            sink.flush()
                .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        }
        println!(
            "calibrated {} with {} ({} records)",
            unit.stream_name,
            unit.method.name(),
            records.len()
        );
    }
    Ok(())
}

/// Smoke test: the optimized method with a zero interval scale must
/// reproduce the plain per-horizon mode exactly on the first stream.
fn self_check_reduction(
    config: &FileConfig,
    streams: &BTreeMap<PathBuf, Vec<StreamRecord>>,
) -> Result<(), CliError> {
    let (path, stream) = streams.iter().next().expect("at least one stream");
    let mut zero = config.run_config(Method::Cptraj);
    zero.big_d = 0.0;
    let plain = config.run_config(Method::Aci);
    let zero_records =
        cptraj_core::eval::run_method(stream, &zero).map_err(CliError::from_run_error)?;
    let plain_records =
        cptraj_core::eval::run_method(stream, &plain).map_err(CliError::from_run_error)?;
    if zero_records != plain_records {
        return Err(CliError::internal(format!(
            "reduction self-check failed on {}: zero-scale optimized run deviates from plain mode",
            path.display()
        )));
    }
    Ok(())
}

pub fn report(records_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let mut groups: BTreeMap<(String, Method), (Vec<f64>, Vec<EvalRecord>)> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(records_dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", records_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().ends_with(".records.jsonl"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CliError::data(format!(
            "no record files (*.records.jsonl) in {}",
            records_dir.display()
        )));
    }

    for path in &entries {
        let (stream, method, rate) = parse_record_name(path)?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EvalRecord = serde_json::from_str(line)
                .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
            records.push(record);
        }
        let group = groups.entry((stream, method)).or_default();
        group.0.push(rate);
        group.1.extend(records);
    }

    let outputs: Vec<RunOutput> = groups
        .into_iter()
        .map(|((stream, method), (mut rates, records))| {
            rates.sort_by(f64::total_cmp);
            rates.dedup();
            RunOutput {
                stream,
                method,
                rates,
                records,
            }
        })
        .collect();

    Manifest::new(
        &format!(
            "{{\"command\":\"report\",\"records\":{:?}}}",
            records_dir.display()
        ),
        0,
        entries,
        out_dir,
    )
    .write(out_dir)?;
    let summary =
        cptraj_core::eval::compare_report(&outputs, out_dir).map_err(CliError::from_run_error)?;
    for method in &summary.methods {
        match method.mean_calibration_score {
            Some(cs) => println!("{}: mean calibration score {cs:.6}", method.method),
            None => println!(
                "{}: no calibration score (insufficient records)",
                method.method
            ),
        }
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn parse_record_name(path: &Path) -> Result<(String, Method, f64), CliError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    let stem = name
        .strip_suffix(".records.jsonl")
        .ok_or_else(|| CliError::data(format!("unexpected record file name {name}")))?;
    let (left, rate_text) = stem
        .rsplit_once("-r")
        .ok_or_else(|| CliError::data(format!("record file {name} lacks a -r<rate> segment")))?;
    let rate: f64 = rate_text
        .parse()
        .map_err(|_| CliError::data(format!("record file {name}: bad rate {rate_text}")))?;
    let (stream, method_text) = left
        .rsplit_once('-')
        .ok_or_else(|| CliError::data(format!("record file {name} lacks a method segment")))?;
    let method = match method_text {
        "cptraj" => Method::Cptraj,
        "aci" => Method::Aci,
        "cptraj_rs" => Method::CptrajRs,
        other => {
            return Err(CliError::data(format!(
                "record file {name}: unknown method {other}"
            )))
        }
    };
    Ok((stream.to_string(), method, rate))
}
