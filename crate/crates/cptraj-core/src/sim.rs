//! Synthetic stream generation and stream-file I/O.
//!
//! The generator is a regime-switching AR(1) process: a latent state
//! follows a Markov chain that stays put with high probability and
//! otherwise jumps uniformly to another state, and the observation follows
//! the active state's AR(1) dynamics `y' = mu + phi * (y - mu) + sigma * eps`.
//! Forecasts roll the same dynamics forward, so the forecaster is exactly
//! specified up to whether it is told the current latent state or has to
//! marginalize over it.
//!
//! Streams are exchanged as JSON Lines, one record per line:
//!
//! ```text
//! {"t": 1, "y": [0.5], "ensemble": [[[0.4], [0.6], ...], ...]}
//! ```
//!
//! `ensemble[m][h]` is trajectory `m`'s step-`h` point. Files ending in
//! `.gz` are transparently gzip-compressed. Writing and re-reading a stream
//! reproduces it exactly (floats survive the JSON round trip bit-for-bit).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::online::TrajectoryEnsemble;

/// AR(1) parameters of one latent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArParams {
    /// Autoregressive coefficient, |phi| < 1.
    pub phi: f64,
    /// Long-run mean of the state.
    pub mu: f64,
    /// Innovation standard deviation, non-negative.
    pub sigma: f64,
}

/// Configuration of the regime-switching AR generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovArConfig {
    /// Per-state AR(1) parameters; the number of states is the length.
    pub states: Vec<ArParams>,
    /// Probability of keeping the current latent state each step.
    pub stay_prob: f64,
    /// Forecast horizon H.
    pub horizons: usize,
    /// Trajectories per ensemble M.
    pub trajectories: usize,
    /// Observations per sequence T.
    pub length: usize,
    /// Number of independent sequences.
    pub sequences: usize,
    pub seed: u64,
    /// When set, the forecaster is not told the current latent state and
    /// starts each rollout from a uniformly drawn state, creating model
    /// misspecification for calibration stress tests.
    #[serde(default)]
    pub hidden_state_forecasts: bool,
}

impl Default for MarkovArConfig {
    fn default() -> Self {
        Self {
            states: vec![
                ArParams {
                    phi: 0.9,
                    mu: -2.0,
                    sigma: 0.5,
                },
                ArParams {
                    phi: 0.5,
                    mu: 0.0,
                    sigma: 0.5,
                },
                ArParams {
                    phi: 0.9,
                    mu: 2.0,
                    sigma: 0.5,
                },
            ],
            stay_prob: 0.98,
            horizons: 32,
            trajectories: 16,
            length: 500,
            sequences: 3,
            seed: 0,
            hidden_state_forecasts: false,
        }
    }
}

impl MarkovArConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::invalid("states", "need at least one latent state"));
        }
        for (i, s) in self.states.iter().enumerate() {
            if !s.phi.is_finite() || s.phi.abs() >= 1.0 {
                return Err(Error::invalid(
                    "states",
                    format!("state {i}: |phi| must be below 1 for stationarity"),
                ));
            }
            if !s.sigma.is_finite() || s.sigma < 0.0 {
                return Err(Error::invalid(
                    "states",
                    format!("state {i}: sigma must be non-negative"),
                ));
            }
            if !s.mu.is_finite() {
                return Err(Error::invalid(
                    "states",
                    format!("state {i}: mu must be finite"),
                ));
            }
        }
        if !self.stay_prob.is_finite() || self.stay_prob <= 0.0 || self.stay_prob >= 1.0 {
            // stay_prob = 1 is still accepted through the direct stepping
            // API for degenerate tests, but a stream config must mix.
            if self.stay_prob != 1.0 || self.states.len() > 1 {
                return Err(Error::invalid("stay_prob", "must lie in (0, 1)"));
            }
        }
        if self.horizons == 0 {
            return Err(Error::invalid("horizons", "must be at least 1"));
        }
        if self.trajectories == 0 {
            return Err(Error::invalid("trajectories", "must be at least 1"));
        }
        if self.sequences == 0 {
            return Err(Error::invalid("sequences", "must be at least 1"));
        }
        Ok(())
    }
}

/// Current state of the process: latent regime index and last observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovArState {
    pub regime: usize,
    pub value: f64,
}

/// Advance the process one step: resample the latent regime (stay with
/// `stay_prob`, otherwise jump uniformly to one of the other states), then
/// emit from the new regime's AR(1) dynamics.
pub fn markov_ar_step(
    state: MarkovArState,
    config: &MarkovArConfig,
    rng: &mut impl Rng,
) -> MarkovArState {
    let n = config.states.len();
    let regime = if n == 1 || rng.random::<f64>() < config.stay_prob {
        state.regime
    } else {
        // Uniform over the other states.
        let mut pick = rng.random_range(0..n - 1);
        if pick >= state.regime {
            pick += 1;
        }
        pick
    };
    let params = config.states[regime];
    let noise = if params.sigma > 0.0 {
        Normal::new(0.0, params.sigma)
            .expect("sigma validated non-negative")
            .sample(rng)
    } else {
        0.0
    };
    let value = params.mu + params.phi * (state.value - params.mu) + noise;
    MarkovArState { regime, value }
}

/// Roll `M` independent `H`-step trajectories forward from the current
/// state, each with fresh noise and regime transitions. With
/// `hidden_state_forecasts` the rollouts start from a uniformly drawn
/// regime instead of the true one.
pub fn markov_ar_forecast(
    state: MarkovArState,
    config: &MarkovArConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<Point>> {
    (0..config.trajectories)
        .map(|_| {
            let mut cursor = state;
            if config.hidden_state_forecasts {
                cursor.regime = rng.random_range(0..config.states.len());
            }
            (0..config.horizons)
                .map(|_| {
                    cursor = markov_ar_step(cursor, config, rng);
                    Point::scalar(cursor.value)
                })
                .collect()
        })
        .collect()
}

/// One stream entry: the ground truth at `t` and the ensemble issued at `t`
/// (trajectory-major: `ensemble[m][h]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub t: u64,
    pub y: Vec<f64>,
    pub ensemble: Vec<Vec<Vec<f64>>>,
}

impl StreamRecord {
    pub fn truth(&self) -> Result<Point> {
        Point::new(self.y.clone())
    }

    pub fn to_ensemble(&self) -> Result<TrajectoryEnsemble> {
        let trajectories = self
            .ensemble
            .iter()
            .map(|traj| {
                traj.iter()
                    .map(|coords| Point::new(coords.clone()))
                    .collect()
            })
            .collect::<Result<Vec<Vec<Point>>>>()?;
        TrajectoryEnsemble::from_trajectories(&trajectories)
    }
}

/// Split-mix style hash for deriving independent sub-seeds from
/// (seed, lane, index) without any RNG state threading.
pub fn derive_seed(seed: u64, lane: u64, index: u64) -> u64 {
    let mut z =
        seed ^ splitmix(lane) ^ splitmix(splitmix(index).wrapping_add(0x9e37_79b9_7f4a_7c15));
    z = splitmix(z);
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generate one sequence of `length` records. Sequences are indexed so that
/// generation is reproducible and embarrassingly parallel across sequences.
pub fn generate_sequence(config: &MarkovArConfig, sequence: usize) -> Result<Vec<StreamRecord>> {
    config.validate()?;
    let seq_seed = derive_seed(config.seed, 1, sequence as u64);
    let mut truth_rng = ChaCha8Rng::seed_from_u64(derive_seed(seq_seed, 2, 0));

    // Start from a uniformly drawn regime at its long-run mean plus one
    // innovation.
    let regime = truth_rng.random_range(0..config.states.len());
    let params = config.states[regime];
    let noise = if params.sigma > 0.0 {
        Normal::new(0.0, params.sigma)
            .expect("validated")
            .sample(&mut truth_rng)
    } else {
        0.0
    };
    let mut state = MarkovArState {
        regime,
        value: params.mu + noise,
    };

    let mut records = Vec::with_capacity(config.length);
    for t in 1..=config.length as u64 {
        state = markov_ar_step(state, config, &mut truth_rng);
        // Forecast noise comes from a per-step lane so that rollouts are a
        // pure function of (config, sequence, t).
        let mut forecast_rng = ChaCha8Rng::seed_from_u64(derive_seed(seq_seed, 3, t));
        let trajectories = markov_ar_forecast(state, config, &mut forecast_rng);
        records.push(StreamRecord {
            t,
            y: vec![state.value],
            ensemble: trajectories
                .iter()
                .map(|traj| traj.iter().map(|p| p.coords().to_vec()).collect())
                .collect(),
        });
    }
    Ok(records)
}

/// Generate all sequences of the configured stream.
pub fn generate_stream(config: &MarkovArConfig) -> Result<Vec<Vec<StreamRecord>>> {
    (0..config.sequences)
        .map(|s| generate_sequence(config, s))
        .collect()
}

/// Write records as JSON Lines; `.gz` paths are gzip-compressed.
pub fn write_stream(records: &[StreamRecord], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut sink: Box<dyn Write> = if is_gz(path) {
        Box::new(flate2::write::GzEncoder::new(
            file,
            flate2::Compression::default(),
        ))
    } else {
        Box::new(BufWriter::new(file))
    };
    for record in records {
        serde_json::to_writer(&mut sink, record)
            .map_err(|e| Error::invalid("record", e.to_string()))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Load a JSON Lines stream, validating record-to-record consistency of the
/// trajectory count, horizon count, and dimension.
pub fn load_stream(path: &Path) -> Result<Vec<StreamRecord>> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let reader = BufReader::new(reader);

    let mut records = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None; // (M, H, d)
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        // Broken JSON is a parse error; well-formed JSON with the wrong
        // shape (missing fields, wrong types) is a schema error.
        let record: StreamRecord = serde_json::from_str(&line).map_err(|e| {
            if e.classify() == serde_json::error::Category::Data {
                Error::Schema {
                    line: line_no,
                    message: e.to_string(),
                }
            } else {
                Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                }
            }
        })?;
        let (m, h, d) = record_shape(&record, line_no)?;
        match shape {
            None => shape = Some((m, h, d)),
            Some(expected) if expected != (m, h, d) => {
                return Err(Error::Schema {
                    line: line_no,
                    message: format!(
                        "record shape (M={m}, H={h}, d={d}) differs from (M={}, H={}, d={})",
                        expected.0, expected.1, expected.2
                    ),
                });
            }
            Some(_) => {}
        }
        records.push(record);
    }
    Ok(records)
}

fn record_shape(record: &StreamRecord, line: usize) -> Result<(usize, usize, usize)> {
    let d = record.y.len();
    if d == 0 {
        return Err(Error::Schema {
            line,
            message: "ground truth must have at least one coordinate".into(),
        });
    }
    let m = record.ensemble.len();
    if m == 0 {
        return Err(Error::Schema {
            line,
            message: "ensemble must contain at least one trajectory".into(),
        });
    }
    let h = record.ensemble[0].len();
    if h == 0 {
        return Err(Error::Schema {
            line,
            message: "trajectories must cover at least one horizon".into(),
        });
    }
    for traj in &record.ensemble {
        if traj.len() != h {
            return Err(Error::Schema {
                line,
                message: "trajectories have unequal horizon counts".into(),
            });
        }
        if traj.iter().any(|p| p.len() != d) {
            return Err(Error::Schema {
                line,
                message: "trajectory points do not match the truth dimension".into(),
            });
        }
    }
    Ok((m, h, d))
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}
