//! Per-stream online calibration state machine.
//!
//! One calibrator owns `H` horizon tracks. Each tick `t` proceeds as:
//!
//! 1. [`CalibratorState::resolve`]: the ground truth `y_t` matures every
//!    prediction issued at `t - h` for horizon `h`. The observed score is
//!    appended to that horizon's score set, the coverage error is evaluated
//!    against the region that was actually issued, and the threshold track
//!    moves by `-eta * (err - alpha)`.
//! 2. [`CalibratorState::candidate_intervals`]: each horizon exposes the
//!    interval `[alpha_h - delta_t, alpha_h + delta_t]` of thresholds that
//!    all preserve the long-term coverage guarantee, with
//!    `delta_t = D / sqrt(t)`.
//! 3. [`CalibratorState::issue`]: a caller-chosen threshold inside each
//!    interval turns the fresh ensemble into one region per horizon, stored
//!    until its ground truth arrives.
//!
//! Threshold tracks are deliberately never clipped to `[0, 1]`: a negative
//! threshold maps to an all-covering region and a threshold at or above one
//! maps to an empty region through the quantile sentinels, and that
//! round-trip is what bounds the track's random walk.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PredictionRegion, SamplePool};
use crate::score::{ScoreKind, ScoreSet};

/// Static configuration of one calibrated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorConfig {
    /// Target miscoverage rate in (0, 1).
    pub alpha_target: f64,
    /// Learning rate of the threshold update, positive.
    pub eta: f64,
    /// Candidate-interval scale: the interval radius at time `t` is
    /// `big_d / sqrt(t)`. Zero collapses every interval to a point.
    pub big_d: f64,
    /// Number of forecast horizons `H`.
    pub horizons: usize,
    /// Non-conformity score driving regions and errors.
    pub score_kind: ScoreKind,
}

impl CalibratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_target.is_finite() || self.alpha_target <= 0.0 || self.alpha_target >= 1.0 {
            return Err(Error::invalid(
                "alpha_target",
                "must lie strictly in (0, 1)",
            ));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::invalid("eta", "must be positive"));
        }
        if !self.big_d.is_finite() || self.big_d < 0.0 {
            return Err(Error::invalid("big_d", "must be non-negative"));
        }
        if self.horizons == 0 {
            return Err(Error::invalid("horizons", "must be at least 1"));
        }
        Ok(())
    }
}

/// Interval-radius schedule `delta_t = D / sqrt(t)`.
pub fn delta_schedule(t: u64, big_d: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("t", "time index starts at 1"));
    }
    Ok(big_d / (t as f64).sqrt())
}

/// The sampled trajectories issued at one time step, grouped per horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pools: Vec<SamplePool>,
}

impl TrajectoryEnsemble {
    /// Group `M` trajectories of `H` steps each into per-horizon pools.
    pub fn from_trajectories(trajectories: &[Vec<Point>]) -> Result<Self> {
        let Some(first) = trajectories.first() else {
            return Err(Error::invalid("ensemble", "needs at least one trajectory"));
        };
        let horizons = first.len();
        if horizons == 0 {
            return Err(Error::invalid("ensemble", "needs at least one horizon"));
        }
        if trajectories.iter().any(|t| t.len() != horizons) {
            return Err(Error::invalid(
                "ensemble",
                "trajectories have unequal lengths",
            ));
        }
        let pools = (0..horizons)
            .map(|h| SamplePool::new(trajectories.iter().map(|t| t[h].clone()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pools })
    }

    pub fn from_pools(pools: Vec<SamplePool>) -> Result<Self> {
        if pools.is_empty() {
            return Err(Error::invalid("ensemble", "needs at least one horizon"));
        }
        let dim = pools[0].dim();
        if pools.iter().any(|p| p.dim() != dim) {
            return Err(Error::invalid("ensemble", "pools have mixed dimensions"));
        }
        Ok(Self { pools })
    }

    pub fn horizons(&self) -> usize {
        self.pools.len()
    }

    pub fn dim(&self) -> usize {
        self.pools[0].dim()
    }

    /// Pool for 1-based horizon `h`.
    pub fn pool(&self, h: usize) -> &SamplePool {
        &self.pools[h - 1]
    }
}

/// Candidate threshold interval `[center - radius, center + radius]`. The
/// center is the raw (unclipped) track value, so the interval may leave
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInterval {
    pub center: f64,
    pub radius: f64,
}

impl ThresholdInterval {
    pub fn low(&self) -> f64 {
        self.center - self.radius
    }

    pub fn high(&self) -> f64 {
        self.center + self.radius
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.low() && value <= self.high()
    }
}

/// One matured prediction: the coverage error and score observed for the
/// region issued at `issue_time` for `horizon`, plus the back-solved
/// largest-covering threshold against the pre-insertion score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOutcome {
    pub horizon: usize,
    pub issue_time: u64,
    pub err: bool,
    pub score: f64,
    pub beta: f64,
    /// Threshold the issued region was built with.
    pub alpha_star: f64,
    /// The region the error was evaluated against, exactly as issued.
    pub region: PredictionRegion,
}

/// A region awaiting its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IssuedRecord {
    issue_time: u64,
    pool: SamplePool,
    region: PredictionRegion,
    alpha_star: f64,
}

/// One horizon's threshold track, score set, and pending regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HorizonTrack {
    alpha_raw: f64,
    scores: ScoreSet,
    issued: VecDeque<IssuedRecord>,
}

/// Threshold update shared by every horizon track.
fn threshold_update(alpha: f64, eta: f64, err: bool, target: f64) -> f64 {
    let err_val = if err { 1.0 } else { 0.0 };
    alpha - eta * (err_val - target)
}

/// Full per-stream calibration state. Single-writer: `resolve`,
/// `candidate_intervals`, and `issue` are called in that order once per
/// tick. Serializable for checkpoint/restart; the JSON round trip is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorState {
    config: CalibratorConfig,
    tracks: Vec<HorizonTrack>,
}

impl CalibratorState {
    /// Fresh state: every track starts at the target rate with a score set
    /// containing only the sentinel.
    pub fn new(config: CalibratorConfig) -> Result<Self> {
        config.validate()?;
        let tracks = (0..config.horizons)
            .map(|_| HorizonTrack {
                alpha_raw: config.alpha_target,
                scores: ScoreSet::new(),
                issued: VecDeque::new(),
            })
            .collect();
        Ok(Self { config, tracks })
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    pub fn horizons(&self) -> usize {
        self.config.horizons
    }

    /// Raw track value for 1-based horizon `h`.
    pub fn alpha_raw(&self, h: usize) -> f64 {
        self.tracks[h - 1].alpha_raw
    }

    /// Scores recorded so far for 1-based horizon `h` (sentinel included in
    /// the count).
    pub fn score_count(&self, h: usize) -> usize {
        self.tracks[h - 1].scores.len()
    }

    pub fn score_set(&self, h: usize) -> &ScoreSet {
        &self.tracks[h - 1].scores
    }

    /// The pool of the prediction that matures at time `t` for horizon `h`,
    /// if one is pending. Lets a multi-rate driver compute each score once:
    /// pools are identical across calibrators fed the same stream.
    pub fn pending_pool(&self, t: u64, h: usize) -> Option<&SamplePool> {
        let issue_time = t.checked_sub(h as u64)?;
        if issue_time == 0 {
            return None;
        }
        let front = self.tracks[h - 1].issued.front()?;
        (front.issue_time == issue_time).then_some(&front.pool)
    }

    /// Mature every prediction whose target time is `t` against the ground
    /// truth `y_t`. Horizons with `t - h < 1` are untouched. Returns one
    /// outcome per matured horizon, ascending in `h`.
    pub fn resolve(&mut self, t: u64, y: &Point) -> Result<Vec<ResolutionOutcome>> {
        self.resolve_scored(t, y, |_| None)
    }

    /// As [`resolve`](Self::resolve), with an optional externally computed
    /// score per horizon (scores do not depend on the target rate, so
    /// multi-rate drivers share them across calibrators).
    pub fn resolve_scored(
        &mut self,
        t: u64,
        y: &Point,
        mut shared_score: impl FnMut(usize) -> Option<f64>,
    ) -> Result<Vec<ResolutionOutcome>> {
        let mut outcomes = Vec::new();
        for h in 1..=self.config.horizons {
            let issue_time = match t.checked_sub(h as u64) {
                Some(t_prime) if t_prime >= 1 => t_prime,
                _ => continue,
            };
            let track = &mut self.tracks[h - 1];
            let record = track.issued.pop_front().ok_or_else(|| {
                Error::StateCorruption(format!(
                    "no issued prediction for horizon {h} maturing at t={t}"
                ))
            })?;
            if record.issue_time != issue_time {
                return Err(Error::StateCorruption(format!(
                    "expected issue time {issue_time} for horizon {h}, found {}",
                    record.issue_time
                )));
            }

            let score = match shared_score(h) {
                Some(s) => s,
                None => self.config.score_kind.score(y, &record.pool)?,
            };
            // Back-solve against the scores known at this point, before the
            // fresh observation joins the set.
            let beta = track.scores.beta_for_observation(score)?;
            let err = !record.region.contains(y)?;
            track.scores.insert(score)?;
            track.alpha_raw = threshold_update(
                track.alpha_raw,
                self.config.eta,
                err,
                self.config.alpha_target,
            );

            outcomes.push(ResolutionOutcome {
                horizon: h,
                issue_time,
                err,
                score,
                beta,
                alpha_star: record.alpha_star,
                region: record.region,
            });
        }
        Ok(outcomes)
    }

    /// Candidate threshold intervals for issuing at time `t`: each horizon's
    /// current raw track value, widened by `delta_t`.
    pub fn candidate_intervals(&self, t: u64) -> Result<Vec<ThresholdInterval>> {
        let radius = delta_schedule(t, self.config.big_d)?;
        Ok(self
            .tracks
            .iter()
            .map(|track| ThresholdInterval {
                center: track.alpha_raw,
                radius,
            })
            .collect())
    }

    /// Issue one region per horizon from the fresh ensemble, using the
    /// chosen thresholds. Each threshold must lie inside its candidate
    /// interval for time `t`; anything outside voids the coverage guarantee
    /// and is rejected.
    pub fn issue(
        &mut self,
        t: u64,
        ensemble: &TrajectoryEnsemble,
        chosen: &[f64],
    ) -> Result<Vec<PredictionRegion>> {
        if ensemble.horizons() != self.config.horizons {
            return Err(Error::invalid(
                "ensemble",
                format!(
                    "has {} horizons, calibrator expects {}",
                    ensemble.horizons(),
                    self.config.horizons
                ),
            ));
        }
        if chosen.len() != self.config.horizons {
            return Err(Error::invalid(
                "chosen",
                format!(
                    "has {} thresholds, calibrator expects {}",
                    chosen.len(),
                    self.config.horizons
                ),
            ));
        }
        let intervals = self.candidate_intervals(t)?;
        for (h, (&alpha_star, interval)) in chosen.iter().zip(&intervals).enumerate() {
            if !interval.contains(alpha_star) {
                return Err(Error::ContractViolation(format!(
                    "threshold {alpha_star} for horizon {} outside [{}, {}] at t={t}",
                    h + 1,
                    interval.low(),
                    interval.high()
                )));
            }
        }

        let mut regions = Vec::with_capacity(self.config.horizons);
        for (h, &alpha_star) in (1..=self.config.horizons).zip(chosen) {
            let track = &mut self.tracks[h - 1];
            let pool = ensemble.pool(h);
            let radius = track.scores.quantile(1.0 - alpha_star);
            let backbone = self.config.score_kind.region_backbone(pool);
            let region = PredictionRegion::new(backbone, radius)?;
            debug_assert!(track.issued.len() < self.config.horizons);
            track.issued.push_back(IssuedRecord {
                issue_time: t,
                pool: pool.clone(),
                region: region.clone(),
                alpha_star,
            });
            regions.push(region);
        }
        Ok(regions)
    }

    #[cfg(test)]
    pub(crate) fn scores_mut(&mut self, h: usize) -> &mut ScoreSet {
        &mut self.tracks[h - 1].scores
    }
}
