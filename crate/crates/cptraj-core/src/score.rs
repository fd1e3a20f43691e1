//! Non-conformity scores, empirical quantiles, and the threshold back-solve.
//!
//! Two score functions are supported:
//!
//! - min-distance: `s(y, pool) = min_m ||y - pool[m]||`, which induces the
//!   union-of-balls region around every sample;
//! - residual: `s(y, pool) = ||y - mean(pool)||`, the classical absolute
//!   residual against the pool mean, inducing a single ball.
//!
//! A [`ScoreSet`] keeps the observed scores for one horizon in ascending
//! order, seeded with a `+inf` sentinel that is never removed. With `n`
//! scores and ascending order statistics `s_(1..n)`, the quantile at level
//! `q` is `s_(ceil(q*n))`, clamped so that `q <= 0` yields an empty region
//! and `ceil(q*n) >= n` yields the all-covering sentinel. This makes a
//! threshold track that escapes `[0, 1]` degrade gracefully: negative
//! thresholds produce infinite regions, thresholds at or above one produce
//! empty regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Radius, SamplePool};

/// Which non-conformity score a calibrator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Minimum distance from the observation to any pool sample.
    MinDistance,
    /// Distance from the observation to the pool mean.
    Residual,
}

impl ScoreKind {
    /// Score an observation against a sample pool.
    pub fn score(self, y: &Point, pool: &SamplePool) -> Result<f64> {
        match self {
            ScoreKind::MinDistance => pcp_score(y, pool),
            ScoreKind::Residual => residual_score(y, pool),
        }
    }

    /// The ball centers a region built under this score uses: every sample
    /// for the min-distance score, the pool mean for the residual score.
    /// In both cases membership `min-dist(y, centers) <= r` coincides with
    /// `score(y, pool) <= r`.
    pub fn region_backbone(self, pool: &SamplePool) -> SamplePool {
        match self {
            ScoreKind::MinDistance => pool.clone(),
            ScoreKind::Residual => {
                SamplePool::new(vec![pool.mean()]).expect("singleton pool is non-empty")
            }
        }
    }
}

/// Minimum Euclidean distance from `y` to the pool samples.
pub fn pcp_score(y: &Point, pool: &SamplePool) -> Result<f64> {
    let mut min = f64::INFINITY;
    for p in pool.points() {
        let d = y.distance(p)?;
        if d < min {
            min = d;
        }
    }
    Ok(min)
}

/// Euclidean distance from `y` to the pool mean.
pub fn residual_score(y: &Point, pool: &SamplePool) -> Result<f64> {
    y.distance(&pool.mean())
}

/// Ascending multiset of non-conformity scores for one horizon, always
/// containing the `+inf` sentinel as its largest element.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    /// Sorted ascending; the last element is always `f64::INFINITY`.
    scores: Vec<f64>,
}

impl Default for ScoreSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ScoreSet {
    /// A fresh set containing only the sentinel.
    pub fn new() -> Self {
        Self {
            scores: vec![f64::INFINITY],
        }
    }

    /// Number of scores including the sentinel.
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the sentinel is never removed
    }

    /// Observed finite scores, ascending (sentinel excluded).
    pub fn finite_scores(&self) -> &[f64] {
        &self.scores[..self.scores.len() - 1]
    }

    /// Insert an observed score, keeping ascending order.
    pub fn insert(&mut self, score: f64) -> Result<()> {
        if !score.is_finite() || score < 0.0 {
            return Err(Error::invalid(
                "score",
                format!("must be finite and non-negative, got {score}"),
            ));
        }
        let idx = self.scores.partition_point(|&s| s < score);
        self.scores.insert(idx, score);
        Ok(())
    }

    /// Empirical quantile under the `ceil(level * n)` order-statistic
    /// convention with sentinel clamping (see module docs).
    pub fn quantile(&self, level: f64) -> Radius {
        if level <= 0.0 {
            return Radius::Empty;
        }
        let n = self.scores.len();
        let k = (level * n as f64).ceil();
        if k >= n as f64 {
            return Radius::Infinite; // s_(n) is the sentinel
        }
        Radius::Finite(self.scores[k as usize - 1])
    }

    /// The largest threshold `beta` in `(0, 1]` such that building a region
    /// at any level strictly below `beta` still covers an observation whose
    /// score is `s_obs`.
    ///
    /// With `j` the smallest 1-based index with `s_(j) >= s_obs` (which
    /// exists because of the sentinel), this is `1 - (j - 1)/n`, computed in
    /// closed form from order statistics. Ties favor coverage: an
    /// observation whose score equals `s_(j)` counts as covered at `s_(j)`.
    pub fn beta_for_observation(&self, s_obs: f64) -> Result<f64> {
        if !s_obs.is_finite() {
            return Err(Error::invalid("s_obs", "must be finite"));
        }
        let n = self.scores.len();
        let below = self.scores.partition_point(|&s| s < s_obs);
        Ok(1.0 - below as f64 / n as f64)
    }
}

// The sentinel cannot survive a JSON round trip as a bare f64 (JSON has no
// infinity), so only the finite scores are serialized and the sentinel is
// restored on deserialization.
impl Serialize for ScoreSet {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.finite_scores().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScoreSet {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let mut scores = Vec::<f64>::deserialize(deserializer)?;
        if !scores.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(serde::de::Error::custom(
                "score set entries must be finite and non-negative",
            ));
        }
        if !scores.is_sorted() {
            return Err(serde::de::Error::custom(
                "score set entries must be ascending",
            ));
        }
        scores.push(f64::INFINITY);
        Ok(Self { scores })
    }
}
