//! Multi-rate evaluation harness and reporting.
//!
//! A method run drives one calibrator per miscoverage rate over a stream.
//! Rates share the per-step score computation (scores do not depend on the
//! rate) but keep independent threshold tracks, beta histories, and
//! adaptive targets. Every matured prediction becomes one [`EvalRecord`],
//! from which the metrics are computed:
//!
//! - calibration score: mean absolute gap between empirical and target
//!   coverage across the rate ladder, per horizon and overall;
//! - interval width: mean region measure, with all-covering warm-up
//!   regions tallied separately instead of polluting the mean;
//! - per-horizon coverage and width of the 90% region;
//! - quartiles of the per-time-step across-horizon calibration score.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Radius;
use crate::online::{CalibratorConfig, CalibratorState};
use crate::optimizer::{
    objective_coverage_width, objective_increasing_width, Objective, OptimizerConfig,
    OptimizerState,
};
use crate::score::ScoreKind;
use crate::sim::{derive_seed, StreamRecord};

/// Calibration method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Min-distance score with horizon-wide threshold optimization.
    Cptraj,
    /// Per-horizon online update alone: point intervals (`D = 0`), no
    /// optimizer, min-distance score.
    Aci,
    /// As [`Cptraj`](Method::Cptraj) but with the residual score.
    #[serde(alias = "cptraj-rs")]
    CptrajRs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cptraj => "cptraj",
            Method::Aci => "aci",
            Method::CptrajRs => "cptraj_rs",
        }
    }

    fn score_kind(self) -> ScoreKind {
        match self {
            Method::Cptraj | Method::Aci => ScoreKind::MinDistance,
            Method::CptrajRs => ScoreKind::Residual,
        }
    }

    fn optimizes(self) -> bool {
        !matches!(self, Method::Aci)
    }
}

/// The default ladder of eleven miscoverage rates.
pub fn default_rates() -> Vec<f64> {
    vec![0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
}

/// Configuration of one method run over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    /// Strictly increasing rates in (0, 1).
    pub miscoverage_rates: Vec<f64>,
    /// Threshold learning rate.
    pub eta: f64,
    /// Candidate-interval scale; forced to zero by [`Method::Aci`].
    pub big_d: f64,
    pub optimizer: OptimizerConfig,
    /// Sample count for 2D region measures.
    pub mc_samples: u32,
    pub seed: u64,
    /// Name of a registered custom objective; built-ins are used when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_objective: Option<String>,
}

impl RunConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            miscoverage_rates: default_rates(),
            eta: 0.005,
            big_d: 1.0,
            optimizer: OptimizerConfig::default(),
            mc_samples: 100_000,
            seed: 0,
            custom_objective: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.miscoverage_rates.is_empty() {
            return Err(Error::invalid("miscoverage_rates", "must not be empty"));
        }
        let mut prev = 0.0;
        for &r in &self.miscoverage_rates {
            if !r.is_finite() || r <= 0.0 || r >= 1.0 {
                return Err(Error::invalid(
                    "miscoverage_rates",
                    format!("rate {r} must lie strictly in (0, 1)"),
                ));
            }
            if r <= prev {
                return Err(Error::invalid(
                    "miscoverage_rates",
                    "rates must be strictly increasing and distinct",
                ));
            }
            prev = r;
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if !self.big_d.is_finite() || self.big_d < 0.0 {
            return Err(Error::invalid("big_d", "must be non-negative"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples", "must be positive"));
        }
        self.optimizer.validate()
    }

    /// The interval scale actually used: the plain online-update method has
    /// no optimizer to consume interval freedom.
    fn effective_big_d(&self) -> f64 {
        if self.method.optimizes() {
            self.big_d
        } else {
            0.0
        }
    }
}

/// Region size observed for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Finite(f64),
    /// All-covering region (warm-up or a negative threshold).
    Infinite,
    /// Measures are not computed for dimensions above two.
    Unavailable,
}

/// One matured prediction at one rate: resolution time `t`, horizon `h`,
/// and what the issued region did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub t: u64,
    pub h: usize,
    pub rate: f64,
    pub covered: bool,
    pub measure: Measure,
    pub alpha_star: f64,
    /// Radius of the issued region; together with the stream record issued
    /// at `t - h`, this reconstructs the region exactly.
    pub radius: Radius,
}

/// Per-scenario cost function: (action vector, beta scenario) -> cost.
pub type ObjectiveFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Custom per-scenario objectives, registered by name.
#[derive(Default)]
pub struct ObjectiveRegistry {
    map: BTreeMap<String, Box<ObjectiveFn>>,
}

impl ObjectiveRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an evaluator mapping (action vector, beta scenario) to a
    /// cost. Replaces any previous entry with the same name.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        evaluator: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) {
        self.map.insert(name.into(), Box::new(evaluator));
    }

    fn get(&self, name: &str) -> Option<&ObjectiveFn> {
        self.map.get(name).map(|b| b.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RateEngine {
    rate: f64,
    calibrator: CalibratorState,
    optimizer: OptimizerState,
}

/// A resumable method run over one stream: feed records in order, collect
/// [`EvalRecord`]s. Serializable mid-stream; the JSON round trip restores
/// the run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    config: RunConfig,
    dim: usize,
    engines: Vec<RateEngine>,
    records: Vec<EvalRecord>,
    next_t: u64,
}

impl MethodRun {
    pub fn new(config: RunConfig, horizons: usize, dim: usize) -> Result<Self> {
        config.validate()?;
        let engines = config
            .miscoverage_rates
            .iter()
            .map(|&rate| {
                let calibrator = CalibratorState::new(CalibratorConfig {
                    alpha_target: rate,
                    eta: config.eta,
                    big_d: config.effective_big_d(),
                    horizons,
                    score_kind: config.method.score_kind(),
                })?;
                let optimizer = OptimizerState::new(horizons, rate, config.optimizer.beta_window);
                Ok(RateEngine {
                    rate,
                    calibrator,
                    optimizer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            dim,
            engines,
            records: Vec::new(),
            next_t: 1,
        })
    }

    pub fn next_t(&self) -> u64 {
        self.next_t
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EvalRecord> {
        self.records
    }

    /// Score set of one rate engine, for cross-rate consistency checks.
    pub fn score_set(&self, rate_index: usize, h: usize) -> &crate::score::ScoreSet {
        self.engines[rate_index].calibrator.score_set(h)
    }

    /// Process the next stream record (times must be contiguous from 1).
    pub fn step(
        &mut self,
        record: &StreamRecord,
        registry: Option<&ObjectiveRegistry>,
    ) -> Result<()> {
        let t = record.t;
        if t != self.next_t {
            return Err(Error::invalid(
                "stream",
                format!(
                    "expected t={}, got t={t}; stream times must be contiguous",
                    self.next_t
                ),
            ));
        }
        self.next_t += 1;

        let y = record.truth()?;
        if y.dim() != self.dim {
            return Err(Error::invalid(
                "stream",
                format!("dimension changed from {} to {}", self.dim, y.dim()),
            ));
        }
        let ensemble = record.to_ensemble()?;

        // Scores are rate-independent: compute each horizon's score once
        // against the pending pool (identical across engines) and share it.
        let kind = self.config.method.score_kind();
        let mut shared: BTreeMap<usize, f64> = BTreeMap::new();
        if let Some(first) = self.engines.first() {
            for h in 1..=first.calibrator.horizons() {
                if let Some(pool) = first.calibrator.pending_pool(t, h) {
                    shared.insert(h, kind.score(&y, pool)?);
                }
            }
        }

        let custom = match &self.config.custom_objective {
            Some(name) => Some(registry.and_then(|r| r.get(name)).ok_or_else(|| {
                Error::invalid(
                    "custom_objective",
                    format!("objective '{name}' is not registered"),
                )
            })?),
            None => None,
        };

        for (rate_idx, engine) in self.engines.iter_mut().enumerate() {
            let outcomes = engine
                .calibrator
                .resolve_scored(t, &y, |h| shared.get(&h).copied())?;

            for outcome in &outcomes {
                let measure = match self.dim {
                    1 => match outcome.region.measure_1d()? {
                        m if m.is_finite() => Measure::Finite(m),
                        _ => Measure::Infinite,
                    },
                    2 => {
                        if outcome.region.radius() == Radius::Infinite {
                            Measure::Infinite
                        } else {
                            let seed = derive_seed(
                                self.config.seed,
                                rate_idx as u64 * 1_000_003 + outcome.horizon as u64,
                                t,
                            );
                            Measure::Finite(
                                outcome.region.measure_2d(self.config.mc_samples, seed)?,
                            )
                        }
                    }
                    // Measures above two dimensions are out of scope, but
                    // the sentinels are still exact.
                    _ => match outcome.region.radius() {
                        Radius::Empty => Measure::Finite(0.0),
                        Radius::Infinite => Measure::Infinite,
                        Radius::Finite(_) => Measure::Unavailable,
                    },
                };
                self.records.push(EvalRecord {
                    t,
                    h: outcome.horizon,
                    rate: engine.rate,
                    covered: !outcome.err,
                    measure,
                    alpha_star: outcome.alpha_star,
                    radius: outcome.region.radius(),
                });
                engine
                    .optimizer
                    .record_beta(outcome.horizon, outcome.beta)?;
            }

            if !outcomes.is_empty() && self.config.method.optimizes() {
                let miscoverage =
                    outcomes.iter().filter(|o| o.err).count() as f64 / outcomes.len() as f64;
                engine.optimizer.adapt_target(
                    miscoverage,
                    engine.rate,
                    self.config.optimizer.eta_target,
                );
            }

            let intervals = engine.calibrator.candidate_intervals(t)?;
            let chosen = if !self.config.method.optimizes() {
                intervals.iter().map(|iv| iv.center).collect()
            } else if let Some(evaluator) = custom {
                let seed = derive_seed(self.config.seed, 0xC0_5EED ^ rate_idx as u64, t);
                engine.optimizer.solve_generic(
                    &intervals,
                    &self.config.optimizer,
                    evaluator,
                    seed,
                )?
            } else {
                engine.optimizer.solve(&intervals, &self.config.optimizer)?
            };
            engine.calibrator.issue(t, &ensemble, &chosen)?;
        }
        Ok(())
    }
}

/// Run a method over a full stream.
pub fn run_method(stream: &[StreamRecord], config: &RunConfig) -> Result<Vec<EvalRecord>> {
    run_method_with(stream, config, None)
}

/// As [`run_method`], with a registry for custom objectives.
pub fn run_method_with(
    stream: &[StreamRecord],
    config: &RunConfig,
    registry: Option<&ObjectiveRegistry>,
) -> Result<Vec<EvalRecord>> {
    let Some(first) = stream.first() else {
        config.validate()?;
        return Ok(Vec::new());
    };
    let horizons = first.ensemble.first().map_or(0, Vec::len);
    let dim = first.y.len();
    let mut run = MethodRun::new(config.clone(), horizons, dim)?;
    for record in stream {
        run.step(record, registry)?;
    }
    Ok(run.into_records())
}

/// Mean coverage per (horizon, rate) cell.
fn coverage_cells(records: &[EvalRecord]) -> BTreeMap<(usize, u64), (f64, usize)> {
    let mut cells: BTreeMap<(usize, u64), (f64, usize)> = BTreeMap::new();
    for r in records {
        let cell = cells.entry((r.h, r.rate.to_bits())).or_insert((0.0, 0));
        cell.0 += if r.covered { 1.0 } else { 0.0 };
        cell.1 += 1;
    }
    cells
}

/// Calibration score for one horizon: mean over the rate ladder of the
/// absolute gap between empirical and target coverage. `None` when any
/// rate has no records for this horizon.
pub fn calibration_score_for_horizon(
    records: &[EvalRecord],
    rates: &[f64],
    h: usize,
) -> Option<f64> {
    let cells = coverage_cells(records);
    let mut total = 0.0;
    for &rate in rates {
        let (sum, count) = cells.get(&(h, rate.to_bits()))?;
        let coverage = sum / *count as f64;
        total += (coverage - (1.0 - rate)).abs();
    }
    Some(total / rates.len() as f64)
}

/// Overall calibration score: mean of the per-horizon scores over every
/// horizon present in the records.
pub fn calibration_score(records: &[EvalRecord], rates: &[f64]) -> Option<f64> {
    let horizons: BTreeSet<usize> = records.iter().map(|r| r.h).collect();
    if horizons.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &h in &horizons {
        total += calibration_score_for_horizon(records, rates, h)?;
    }
    Some(total / horizons.len() as f64)
}

/// Width aggregate: mean over finite measures, with sentinel counts
/// reported alongside instead of entering the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub finite_mean: Option<f64>,
    pub finite_count: usize,
    pub infinite_count: usize,
    pub unavailable_count: usize,
}

pub fn avg_width(records: &[EvalRecord]) -> WidthSummary {
    let mut sum = 0.0;
    let mut finite = 0usize;
    let mut infinite = 0usize;
    let mut unavailable = 0usize;
    for r in records {
        match r.measure {
            Measure::Finite(m) => {
                sum += m;
                finite += 1;
            }
            Measure::Infinite => infinite += 1,
            Measure::Unavailable => unavailable += 1,
        }
    }
    WidthSummary {
        finite_mean: (finite > 0).then(|| sum / finite as f64),
        finite_count: finite,
        infinite_count: infinite,
        unavailable_count: unavailable,
    }
}

/// Per-time-step across-horizon calibration scores: at each resolution
/// time, coverage is averaged across the horizons that matured, the
/// absolute gap to target is averaged across rates, and the 25/50/75
/// percentiles of those per-step scores are returned.
pub fn horizon_coverage_quartiles(
    records: &[EvalRecord],
    rates: &[f64],
) -> Option<(f64, f64, f64)> {
    // (t, rate) -> (covered sum, count)
    let mut per_t: BTreeMap<u64, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let cell = per_t
            .entry(r.t)
            .or_default()
            .entry(r.rate.to_bits())
            .or_insert((0.0, 0));
        cell.0 += if r.covered { 1.0 } else { 0.0 };
        cell.1 += 1;
    }
    if per_t.is_empty() {
        return None;
    }
    let mut scores = Vec::with_capacity(per_t.len());
    for cells in per_t.values() {
        let mut total = 0.0;
        for &rate in rates {
            let (sum, count) = cells.get(&rate.to_bits())?;
            let coverage = sum / *count as f64;
            total += (coverage - (1.0 - rate)).abs();
        }
        scores.push(total / rates.len() as f64);
    }
    scores.sort_by(f64::total_cmp);
    let pick = |p: f64| {
        let k = ((p * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
        scores[k - 1]
    };
    Some((pick(0.25), pick(0.5), pick(0.75)))
}

/// Per-horizon empirical coverage and width at one rate (90% regions when
/// called with rate 0.1).
pub fn per_horizon_coverage_width(
    records: &[EvalRecord],
    rate: f64,
) -> Vec<(usize, f64, WidthSummary)> {
    let horizons: BTreeSet<usize> = records.iter().map(|r| r.h).collect();
    horizons
        .into_iter()
        .filter_map(|h| {
            let slice: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| r.h == h && r.rate.to_bits() == rate.to_bits())
                .collect();
            if slice.is_empty() {
                return None;
            }
            let coverage = slice.iter().filter(|r| r.covered).count() as f64 / slice.len() as f64;
            let owned: Vec<EvalRecord> = slice.into_iter().cloned().collect();
            Some((h, coverage, avg_width(&owned)))
        })
        .collect()
}

/// Per-horizon calibration scores across the full rate ladder.
pub fn per_horizon_calibration_scores(records: &[EvalRecord], rates: &[f64]) -> Vec<(usize, f64)> {
    let horizons: BTreeSet<usize> = records.iter().map(|r| r.h).collect();
    horizons
        .into_iter()
        .filter_map(|h| calibration_score_for_horizon(records, rates, h).map(|cs| (h, cs)))
        .collect()
}

/// Records of one (stream, method) run, labeled for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub stream: String,
    pub method: Method,
    pub rates: Vec<f64>,
    pub records: Vec<EvalRecord>,
}

/// Per-method aggregate over streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_calibration_score: Option<f64>,
    pub std_calibration_score: Option<f64>,
    pub per_stream_calibration_score: BTreeMap<String, Option<f64>>,
    pub width: WidthSummary,
    pub hcs_quartiles: BTreeMap<String, Option<(f64, f64, f64)>>,
}

/// Everything the report writer emits, also returned for programmatic use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rates: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

/// Write the comparison report: per-(stream, method) CSV tables plus one
/// JSON summary. Every method must cover the same stream set. Output is
/// deterministic byte-for-byte for identical inputs.
pub fn compare_report(outputs: &[RunOutput], out_dir: &Path) -> Result<ReportSummary> {
    if outputs.is_empty() {
        return Err(Error::invalid("outputs", "need at least one method run"));
    }
    let rates = outputs[0].rates.clone();
    for o in outputs {
        if o.rates != rates {
            return Err(Error::invalid(
                "outputs",
                "method runs disagree on the miscoverage-rate ladder",
            ));
        }
    }
    let methods: BTreeSet<Method> = outputs.iter().map(|o| o.method).collect();
    let streams_of = |m: Method| -> BTreeSet<&str> {
        outputs
            .iter()
            .filter(|o| o.method == m)
            .map(|o| o.stream.as_str())
            .collect()
    };
    let first_streams = streams_of(*methods.iter().next().expect("non-empty"));
    for &m in &methods {
        if streams_of(m) != first_streams {
            return Err(Error::invalid(
                "outputs",
                "methods were run on different stream sets",
            ));
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let fig2_rate = rates
        .iter()
        .copied()
        .min_by(|a, b| (a - 0.1).abs().total_cmp(&(b - 0.1).abs()))
        .expect("rates non-empty");

    for output in outputs {
        let base = |metric: &str| {
            out_dir.join(format!(
                "{}-{}-{metric}.csv",
                output.stream,
                output.method.name()
            ))
        };

        let mut cs = String::from("horizon,calibration_score\n");
        for (h, score) in per_horizon_calibration_scores(&output.records, &rates) {
            cs.push_str(&format!("{h},{score}\n"));
        }
        if let Some(overall) = calibration_score(&output.records, &rates) {
            cs.push_str(&format!("overall,{overall}\n"));
        }
        write_text(&base("cs"), &cs)?;

        let width = avg_width(&output.records);
        let mut w = String::from("finite_mean,finite_count,infinite_count,unavailable_count\n");
        w.push_str(&format!(
            "{},{},{},{}\n",
            width
                .finite_mean
                .map_or(String::from("nan"), |m| m.to_string()),
            width.finite_count,
            width.infinite_count,
            width.unavailable_count
        ));
        write_text(&base("width"), &w)?;

        let mut cov = String::from("horizon,coverage,width_finite_mean,width_infinite_count\n");
        for (h, coverage, width) in per_horizon_coverage_width(&output.records, fig2_rate) {
            cov.push_str(&format!(
                "{h},{coverage},{},{}\n",
                width
                    .finite_mean
                    .map_or(String::from("nan"), |m| m.to_string()),
                width.infinite_count
            ));
        }
        write_text(&base("coverage90"), &cov)?;

        let mut q = String::from("p25,p50,p75\n");
        if let Some((p25, p50, p75)) = horizon_coverage_quartiles(&output.records, &rates) {
            q.push_str(&format!("{p25},{p50},{p75}\n"));
        }
        write_text(&base("hcs-quartiles"), &q)?;
    }

    let mut summaries = Vec::new();
    for &method in &methods {
        let runs: Vec<&RunOutput> = outputs.iter().filter(|o| o.method == method).collect();
        let per_stream: BTreeMap<String, Option<f64>> = runs
            .iter()
            .map(|o| (o.stream.clone(), calibration_score(&o.records, &rates)))
            .collect();
        let values: Vec<f64> = per_stream.values().filter_map(|v| *v).collect();
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        let std = (values.len() > 1).then(|| {
            let m = values.iter().sum::<f64>() / values.len() as f64;
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
                .sqrt()
        });
        let all_records: Vec<EvalRecord> = runs
            .iter()
            .flat_map(|o| o.records.iter().cloned())
            .collect();
        let hcs = runs
            .iter()
            .map(|o| {
                (
                    o.stream.clone(),
                    horizon_coverage_quartiles(&o.records, &rates),
                )
            })
            .collect();
        summaries.push(MethodSummary {
            method: method.name().to_string(),
            mean_calibration_score: mean,
            std_calibration_score: std,
            per_stream_calibration_score: per_stream,
            width: avg_width(&all_records),
            hcs_quartiles: hcs,
        });
    }

    let summary = ReportSummary {
        rates,
        methods: summaries,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::invalid("summary", e.to_string()))?;
    write_text(&out_dir.join("summary.json"), &format!("{json}\n"))?;
    Ok(summary)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(content.as_bytes())?;
    Ok(())
}

/// Per-scenario cost of the built-in objectives, exposed for custom
/// registries that want to extend rather than replace them.
pub fn builtin_objective_cost(
    objective: Objective,
    actions: &[f64],
    betas: &[f64],
    alpha_t: f64,
    lambda: f64,
    lambda_j: f64,
) -> f64 {
    let base = objective_coverage_width(actions, betas, alpha_t, lambda);
    match objective {
        Objective::CoverageWidth => base,
        Objective::CoverageWidthIncreasing => base + objective_increasing_width(actions, lambda_j),
    }
}
