//! Streaming calibration for sampled forecast trajectories.
//!
//! Probabilistic forecasters emit ensembles of future trajectories; this
//! crate wraps those samples in prediction regions whose per-horizon
//! long-term coverage converges to a user-chosen rate. Each horizon runs an
//! online threshold update that, instead of a single calibration threshold,
//! yields an interval of admissible thresholds; a horizon-wide optimizer
//! then picks one threshold per horizon to trade coverage against region
//! size across the whole forecast window.
//!
//! Modules:
//! - [`geometry`]: points, sample pools, union-of-balls regions, measures;
//! - [`score`]: non-conformity scores, score sets, quantiles, back-solve;
//! - [`online`]: the per-stream state machine (issue, resolve, update);
//! - [`optimizer`]: threshold selection across horizons;
//! - [`sim`]: regime-switching AR stream generator and stream files;
//! - [`eval`]: multi-rate evaluation harness, metrics, and reports.
//!
//! The per-tick loop: resolve matured predictions, feed the back-solved
//! thresholds to the optimizer, pick one threshold per horizon inside the
//! candidate intervals, issue fresh regions.
//!
//! ```
//! use cptraj_core::online::{CalibratorConfig, CalibratorState, TrajectoryEnsemble};
//! use cptraj_core::optimizer::{OptimizerConfig, OptimizerState};
//! use cptraj_core::score::ScoreKind;
//! use cptraj_core::{Point, SamplePool};
//!
//! let mut calibrator = CalibratorState::new(CalibratorConfig {
//!     alpha_target: 0.1,
//!     eta: 0.005,
//!     big_d: 1.0,
//!     horizons: 2,
//!     score_kind: ScoreKind::MinDistance,
//! })?;
//! let mut optimizer = OptimizerState::new(2, 0.1, 50);
//! let opt_cfg = OptimizerConfig::default();
//!
//! for t in 1..=20u64 {
//!     let y = Point::scalar((t as f64 * 0.4).sin());
//!     for outcome in calibrator.resolve(t, &y)? {
//!         optimizer.record_beta(outcome.horizon, outcome.beta)?;
//!     }
//!     let intervals = calibrator.candidate_intervals(t)?;
//!     let chosen = optimizer.solve(&intervals, &opt_cfg)?;
//!     let pools = (1..=2)
//!         .map(|h| {
//!             SamplePool::from_scalars(&[
//!                 ((t + h) as f64 * 0.4).sin(),
//!                 ((t + h) as f64 * 0.4).sin() + 0.3,
//!             ])
//!         })
//!         .collect::<Result<Vec<_>, _>>()?;
//!     let regions = calibrator.issue(t, &TrajectoryEnsemble::from_pools(pools)?, &chosen)?;
//!     assert_eq!(regions.len(), 2);
//! }
//! # Ok::<(), cptraj_core::Error>(())
//! ```

pub mod error;
pub mod eval;
pub mod geometry;
pub mod online;
pub mod optimizer;
pub mod score;
pub mod sim;

pub use error::{Error, Result};
pub use eval::{EvalRecord, Measure, Method, RunConfig};
pub use geometry::{Point, PredictionRegion, Radius, SamplePool};
pub use online::{
    CalibratorConfig, CalibratorState, ResolutionOutcome, ThresholdInterval, TrajectoryEnsemble,
};
pub use optimizer::{Objective, OptimizerConfig, OptimizerState};
pub use score::{pcp_score, residual_score, ScoreKind, ScoreSet};
pub use sim::{MarkovArConfig, StreamRecord};
