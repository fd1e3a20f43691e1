//! Points, sample pools, and union-of-balls prediction regions.
//!
//! A prediction region is the union of balls of a common radius centered on
//! a pool of sampled forecast points. Membership is therefore equivalent to
//! "minimum distance to the pool is at most the radius", which keeps region
//! tests and the min-distance score in exact agreement.
//!
//! Region size is the Lebesgue measure of the union: in 1D it is computed
//! exactly by a sort-and-sweep merge of intervals, in 2D it is estimated by
//! seeded Monte Carlo over the joint bounding box of the disks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the target space. Dimensions 1 and 2 are fully supported;
/// higher dimensions support membership tests but not measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    /// Build a point, rejecting empty or non-finite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("point", "must have at least one coordinate"));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "point",
                format!("coordinate {bad} is not finite"),
            ));
        }
        Ok(Self { coords })
    }

    /// Convenience constructor for scalar targets.
    pub fn scalar(value: f64) -> Self {
        Self::new(vec![value]).expect("scalar points require a finite value")
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Euclidean distance to another point of the same dimension.
    pub fn distance(&self, other: &Point) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let sq: f64 = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sq.sqrt())
    }
}

/// The sampled forecast values for one horizon: a non-empty set of points
/// sharing a dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePool {
    points: Vec<Point>,
}

impl SamplePool {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("sample pool", "must not be empty"));
        };
        let dim = first.dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().copied().map(Point::scalar).collect())
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // enforced non-empty at construction
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Coordinate-wise mean of the pool.
    pub fn mean(&self) -> Point {
        let dim = self.dim();
        let mut acc = vec![0.0; dim];
        for p in &self.points {
            for (a, c) in acc.iter_mut().zip(p.coords()) {
                *a += c;
            }
        }
        let m = self.points.len() as f64;
        for a in &mut acc {
            *a /= m;
        }
        Point { coords: acc }
    }
}

/// Calibrated ball radius. `Empty` regions contain nothing; `Infinite`
/// regions contain everything. Both sentinels arise from degenerate quantile
/// levels during warm-up or when a threshold track leaves [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radius {
    Empty,
    Finite(f64),
    Infinite,
}

impl Radius {
    pub fn is_finite(&self) -> bool {
        matches!(self, Radius::Finite(_))
    }
}

/// Union of balls of one radius around each pool point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRegion {
    centers: SamplePool,
    radius: Radius,
}

impl PredictionRegion {
    /// Build a region; finite radii must be non-negative.
    pub fn new(centers: SamplePool, radius: Radius) -> Result<Self> {
        if let Radius::Finite(r) = radius {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::invalid(
                    "radius",
                    format!("finite radius must be non-negative, got {r}"),
                ));
            }
        }
        Ok(Self { centers, radius })
    }

    pub fn centers(&self) -> &SamplePool {
        &self.centers
    }

    pub fn radius(&self) -> Radius {
        self.radius
    }

    /// Membership test: minimum distance to the centers is at most the
    /// radius. Exactly dual to the min-distance score by construction.
    pub fn contains(&self, y: &Point) -> Result<bool> {
        if y.dim() != self.centers.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.centers.dim(),
                got: y.dim(),
            });
        }
        Ok(match self.radius {
            Radius::Empty => false,
            Radius::Infinite => true,
            Radius::Finite(r) => {
                let mut min = f64::INFINITY;
                for c in self.centers.points() {
                    let d = y.distance(c)?;
                    if d < min {
                        min = d;
                    }
                }
                min <= r
            }
        })
    }

    /// Exact length of the merged interval union (1D regions only).
    pub fn measure_1d(&self) -> Result<f64> {
        if self.centers.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.centers.dim(),
            });
        }
        let r = match self.radius {
            Radius::Empty => return Ok(0.0),
            Radius::Infinite => return Ok(f64::INFINITY),
            Radius::Finite(r) => r,
        };
        let mut intervals: Vec<(f64, f64)> = self
            .centers
            .points()
            .iter()
            .map(|p| (p.coords()[0] - r, p.coords()[0] + r))
            .collect();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Sweep: extend the open interval or close it and start a new one.
        let mut total = 0.0;
        let (mut lo, mut hi) = intervals[0];
        for &(a, b) in &intervals[1..] {
            if a <= hi {
                hi = hi.max(b);
            } else {
                total += hi - lo;
                lo = a;
                hi = b;
            }
        }
        total += hi - lo;
        Ok(total)
    }

    /// Monte Carlo estimate of the union-of-disks area (2D regions only).
    ///
    /// Samples `mc_samples` points uniformly in the bounding box of all
    /// disks and scales the hit fraction by the box area. Deterministic for
    /// a fixed seed.
    pub fn measure_2d(&self, mc_samples: u32, rng_seed: u64) -> Result<f64> {
        if self.centers.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.centers.dim(),
            });
        }
        if mc_samples == 0 {
            return Err(Error::invalid("mc_samples", "must be positive"));
        }
        let r = match self.radius {
            Radius::Empty => return Ok(0.0),
            Radius::Infinite => return Ok(f64::INFINITY),
            Radius::Finite(r) => r,
        };
        if r == 0.0 {
            return Ok(0.0);
        }

        let xs: Vec<f64> = self
            .centers
            .points()
            .iter()
            .map(|p| p.coords()[0])
            .collect();
        let ys: Vec<f64> = self
            .centers
            .points()
            .iter()
            .map(|p| p.coords()[1])
            .collect();
        let min_x = xs.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - r;
        let max_x = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + r;
        let min_y = ys.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - r;
        let max_y = ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + r;
        let box_area = (max_x - min_x) * (max_y - min_y);

        let r_sq = r * r;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut hits = 0u64;
        for _ in 0..mc_samples {
            let px = min_x + rng.random::<f64>() * (max_x - min_x);
            let py = min_y + rng.random::<f64>() * (max_y - min_y);
            let inside = xs
                .iter()
                .zip(&ys)
                .any(|(&cx, &cy)| (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r_sq);
            if inside {
                hits += 1;
            }
        }
        Ok(box_area * hits as f64 / f64::from(mc_samples))
    }
}
