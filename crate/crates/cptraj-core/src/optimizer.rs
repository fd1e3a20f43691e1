//! Horizon-wide threshold selection.
//!
//! Each tick the online update hands over one candidate interval per
//! horizon. The optimizer discretizes every interval into a small action
//! grid and picks one threshold per horizon to minimize the expected cost
//!
//! ```text
//!   E[ max(rho_H / H - alpha_t, 0) ] + lambda * sum_h (1 - u_h)
//! ```
//!
//! where `rho_H` counts simulated miscoverages across the horizon. The
//! simulation treats horizons as independent: a miscoverage at horizon `h`
//! happens when the chosen threshold `u_h` exceeds a draw from that
//! horizon's recent back-solved thresholds (the beta history), so
//! `P(err_h) = miscoverage_prob(F_h, u_h)` and `rho_H` is a sum of
//! independent Bernoullis whose distribution is computed exactly by
//! convolution.
//!
//! Joint selection is exact: when the action space is small enough the
//! solver enumerates it (sharing prefix convolutions), otherwise it seeds a
//! backward dynamic program over `(horizon, error count)` and polishes the
//! extracted sequence with exact coordinate descent. A Monte Carlo variant
//! ([`OptimizerState::solve_generic`]) accepts arbitrary per-scenario cost
//! functions for user-defined objectives.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::online::ThresholdInterval;

/// Built-in objective shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Expected horizon-coverage shortfall plus width penalty.
    CoverageWidth,
    /// [`CoverageWidth`](Objective::CoverageWidth) plus a penalty whenever
    /// the threshold sequence lets region widths shrink across horizons.
    CoverageWidthIncreasing,
}

/// Optimizer knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Coverage/width trade-off. Small values prioritize coverage.
    pub lambda: f64,
    /// Grid points per candidate interval (endpoints included).
    pub action_grid_k: usize,
    /// Step size of the adaptive coverage target.
    pub eta_target: f64,
    /// Scenario draws for [`OptimizerState::solve_generic`].
    pub n_scenarios: usize,
    pub objective: Objective,
    /// Strictness of the increasing-width penalty; zero disables it.
    pub lambda_j: f64,
    /// Ring-buffer capacity of each horizon's beta history.
    pub beta_window: usize,
    /// Trim quantile: scenarios draw only from betas strictly below the
    /// theta-quantile of the history. One keeps the full history.
    pub theta: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.003,
            action_grid_k: 5,
            eta_target: 0.01,
            n_scenarios: 100,
            objective: Objective::CoverageWidth,
            lambda_j: 0.0,
            beta_window: 50,
            theta: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        if self.action_grid_k == 0 {
            return Err(Error::invalid("action_grid_k", "must be at least 1"));
        }
        if !self.eta_target.is_finite() || self.eta_target <= 0.0 {
            return Err(Error::invalid("eta_target", "must be positive"));
        }
        if self.n_scenarios == 0 {
            return Err(Error::invalid("n_scenarios", "must be at least 1"));
        }
        if !self.lambda_j.is_finite() || self.lambda_j < 0.0 {
            return Err(Error::invalid("lambda_j", "must be non-negative"));
        }
        if self.beta_window == 0 {
            return Err(Error::invalid("beta_window", "must be at least 1"));
        }
        if !self.theta.is_finite() || self.theta <= 0.0 || self.theta > 1.0 {
            return Err(Error::invalid("theta", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Ring buffer of the most recent back-solved thresholds for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaHistory {
    buffer: VecDeque<f64>,
    capacity: usize,
}

impl BetaHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            buffer: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Append a threshold in `(0, 1]`, evicting the oldest entry when full.
    pub fn push(&mut self, beta: f64) -> Result<()> {
        if !beta.is_finite() || beta <= 0.0 || beta > 1.0 {
            return Err(Error::invalid(
                "beta",
                format!("must lie in (0, 1], got {beta}"),
            ));
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(beta);
        Ok(())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    /// Entries strictly below the theta-quantile of the buffer, where the
    /// quantile is the `floor(theta * n) + 1`-th ascending order statistic.
    /// `theta = 1` (or any index past the end) keeps everything. May come
    /// back empty, e.g. for a singleton buffer; callers fall back to the
    /// untrimmed buffer in that case.
    pub fn trimmed(&self, theta: f64) -> Vec<f64> {
        let n = self.buffer.len();
        if n == 0 {
            return Vec::new();
        }
        let mut sorted: Vec<f64> = self.buffer.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let idx = (theta * n as f64).floor() as usize + 1;
        if idx > n {
            return sorted;
        }
        let cutoff = sorted[idx - 1];
        sorted.into_iter().filter(|&b| b < cutoff).collect()
    }

    /// Trimmed values, falling back to the full buffer when trimming
    /// removes everything. Empty only when the buffer itself is empty.
    pub fn effective(&self, theta: f64) -> Vec<f64> {
        let trimmed = self.trimmed(theta);
        if trimmed.is_empty() {
            self.buffer.iter().copied().collect()
        } else {
            trimmed
        }
    }
}

/// Fraction of recorded thresholds that a chosen threshold would exceed
/// (strict inequality: choosing exactly the recorded threshold still
/// covers).
pub fn miscoverage_prob(betas: &[f64], u: f64) -> f64 {
    if betas.is_empty() {
        return 0.0;
    }
    let over = betas.iter().filter(|&&b| u > b).count();
    over as f64 / betas.len() as f64
}

/// Per-scenario cost: coverage shortfall across the horizon plus the width
/// penalty, with the chosen threshold standing in for interval size
/// (`1 - u` grows as regions widen).
pub fn objective_coverage_width(actions: &[f64], betas: &[f64], alpha_t: f64, lambda: f64) -> f64 {
    debug_assert_eq!(actions.len(), betas.len());
    let horizon = actions.len() as f64;
    let rho: usize = actions.iter().zip(betas).filter(|(&u, &b)| u > b).count();
    let shortfall = (rho as f64 / horizon - alpha_t).max(0.0);
    let width: f64 = actions.iter().map(|&u| 1.0 - u).sum();
    shortfall + lambda * width
}

/// Penalty for threshold sequences whose implied widths shrink across the
/// horizon: `sum_h max(0, lambda_j * u_h - u_{h-1})`. Zero `lambda_j`
/// disables it.
pub fn objective_increasing_width(actions: &[f64], lambda_j: f64) -> f64 {
    actions
        .windows(2)
        .map(|w| (lambda_j * w[1] - w[0]).max(0.0))
        .sum()
}

/// Adaptive target state plus per-horizon beta histories. One per stream,
/// owned by the stream's driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Adaptive horizon-coverage target; starts at the user rate and is
    /// never clipped.
    pub alpha_t: f64,
    histories: Vec<BetaHistory>,
}

impl OptimizerState {
    pub fn new(horizons: usize, alpha_target: f64, beta_window: usize) -> Self {
        Self {
            alpha_t: alpha_target,
            histories: (0..horizons)
                .map(|_| BetaHistory::new(beta_window))
                .collect(),
        }
    }

    pub fn history(&self, h: usize) -> &BetaHistory {
        &self.histories[h - 1]
    }

    /// Record a back-solved threshold for 1-based horizon `h`.
    pub fn record_beta(&mut self, h: usize, beta: f64) -> Result<()> {
        self.histories[h - 1].push(beta)
    }

    /// Move the adaptive target toward the user rate based on the observed
    /// across-horizon miscoverage fraction.
    pub fn adapt_target(&mut self, horizon_miscoverage: f64, alpha_user: f64, eta_target: f64) {
        debug_assert!((0.0..=1.0).contains(&horizon_miscoverage));
        self.alpha_t -= eta_target * (horizon_miscoverage - alpha_user);
    }

    /// Exact joint threshold selection under the built-in objective.
    ///
    /// Falls back to the interval centers whenever any horizon has no beta
    /// history yet. Small action spaces are enumerated exactly; large ones
    /// go through a dynamic-programming seed plus exact coordinate descent.
    /// Every returned threshold lies inside its interval by construction.
    pub fn solve(
        &self,
        intervals: &[ThresholdInterval],
        cfg: &OptimizerConfig,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        if intervals.is_empty() {
            return Err(Error::invalid("intervals", "must not be empty"));
        }
        if intervals.len() != self.histories.len() {
            return Err(Error::invalid(
                "intervals",
                format!(
                    "got {} intervals for {} horizons",
                    intervals.len(),
                    self.histories.len()
                ),
            ));
        }
        let centers: Vec<f64> = intervals.iter().map(|iv| iv.center).collect();
        if self.histories.iter().any(BetaHistory::is_empty) {
            return Ok(centers);
        }

        let grids: Vec<Vec<f64>> = intervals
            .iter()
            .map(|iv| action_grid(iv, cfg.action_grid_k))
            .collect();
        let betas: Vec<Vec<f64>> = self
            .histories
            .iter()
            .map(|hist| hist.effective(cfg.theta))
            .collect();
        let probs: Vec<Vec<f64>> = grids
            .iter()
            .zip(&betas)
            .map(|(grid, f)| grid.iter().map(|&u| miscoverage_prob(f, u)).collect())
            .collect();

        let inc_lambda = match cfg.objective {
            Objective::CoverageWidth => None,
            Objective::CoverageWidthIncreasing => Some(cfg.lambda_j),
        };
        let problem = ExactProblem {
            grids: &grids,
            probs: &probs,
            alpha_t: self.alpha_t,
            lambda: cfg.lambda,
            inc_lambda,
        };

        let total: f64 = grids.iter().map(|g| g.len() as f64).product();
        let picked = if total <= ENUMERATION_BUDGET as f64 {
            problem.enumerate()
        } else {
            problem.seed_and_polish(&centers)
        };
        Ok(picked)
    }

    /// Monte Carlo threshold selection for arbitrary per-scenario costs.
    ///
    /// Draws `n_scenarios` beta scenarios (independently per horizon, from
    /// the trimmed histories) with a caller seed, then coordinate-descends
    /// over the action grids starting from the interval centers. The result
    /// never costs more than the centers on the same scenarios.
    pub fn solve_generic(
        &self,
        intervals: &[ThresholdInterval],
        cfg: &OptimizerConfig,
        evaluator: impl Fn(&[f64], &[f64]) -> f64,
        rng_seed: u64,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        if intervals.is_empty() {
            return Err(Error::invalid("intervals", "must not be empty"));
        }
        if intervals.len() != self.histories.len() {
            return Err(Error::invalid(
                "intervals",
                format!(
                    "got {} intervals for {} horizons",
                    intervals.len(),
                    self.histories.len()
                ),
            ));
        }
        let centers: Vec<f64> = intervals.iter().map(|iv| iv.center).collect();
        if self.histories.iter().any(BetaHistory::is_empty) {
            return Ok(centers);
        }

        let pools: Vec<Vec<f64>> = self
            .histories
            .iter()
            .map(|hist| hist.effective(cfg.theta))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let scenarios: Vec<Vec<f64>> = (0..cfg.n_scenarios)
            .map(|_| {
                pools
                    .iter()
                    .map(|pool| pool[rng.random_range(0..pool.len())])
                    .collect()
            })
            .collect();
        let mean_cost = |actions: &[f64]| -> f64 {
            scenarios
                .iter()
                .map(|sc| evaluator(actions, sc))
                .sum::<f64>()
                / scenarios.len() as f64
        };

        let grids: Vec<Vec<f64>> = intervals
            .iter()
            .map(|iv| action_grid(iv, cfg.action_grid_k))
            .collect();
        let mut actions = centers;
        let mut best = mean_cost(&actions);
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for h in 0..actions.len() {
                let original = actions[h];
                let mut best_u = original;
                for &u in &grids[h] {
                    actions[h] = u;
                    let cost = mean_cost(&actions);
                    if cost < best {
                        best = cost;
                        best_u = u;
                        improved = true;
                    }
                }
                actions[h] = best_u;
            }
            if !improved {
                break;
            }
        }
        Ok(actions)
    }
}

/// Enumeration is exact but exponential; beyond this many action vectors
/// the solver switches to the seeded polish path.
const ENUMERATION_BUDGET: usize = 4096;
const MAX_SWEEPS: usize = 60;

/// Evenly spaced grid over the interval, endpoints included, clamped so
/// float error can never step outside.
fn action_grid(interval: &ThresholdInterval, k: usize) -> Vec<f64> {
    let (low, high) = (interval.low(), interval.high());
    if k == 1 || interval.radius == 0.0 {
        return vec![interval.center];
    }
    (0..k)
        .map(|i| {
            let u = low + (high - low) * i as f64 / (k - 1) as f64;
            u.clamp(low, high)
        })
        .collect()
}

/// Exact-expectation selection problem over fixed grids.
struct ExactProblem<'a> {
    grids: &'a [Vec<f64>],
    probs: &'a [Vec<f64>],
    alpha_t: f64,
    lambda: f64,
    /// Increasing-width penalty weight, when that objective is active.
    inc_lambda: Option<f64>,
}

impl ExactProblem<'_> {
    fn horizons(&self) -> usize {
        self.grids.len()
    }

    /// Exact expected cost of one action vector: width and optional
    /// increasing-width terms are deterministic, the shortfall term sums
    /// the exact Bernoulli-convolution distribution of the error count.
    fn expected_cost(&self, choice: &[usize]) -> f64 {
        let horizon = self.horizons();
        let mut dist = vec![0.0; horizon + 1];
        dist[0] = 1.0;
        let mut width = 0.0;
        for (h, &idx) in choice.iter().enumerate() {
            let p = self.probs[h][idx];
            width += 1.0 - self.grids[h][idx];
            for i in (0..=h).rev() {
                let mass = dist[i];
                dist[i] = mass * (1.0 - p);
                dist[i + 1] += mass * p;
            }
        }
        let mut shortfall = 0.0;
        for (rho, &mass) in dist.iter().enumerate() {
            shortfall += mass * (rho as f64 / horizon as f64 - self.alpha_t).max(0.0);
        }
        let mut cost = shortfall + self.lambda * width;
        if let Some(lj) = self.inc_lambda {
            let actions: Vec<f64> = choice
                .iter()
                .enumerate()
                .map(|(h, &idx)| self.grids[h][idx])
                .collect();
            cost += objective_increasing_width(&actions, lj);
        }
        cost
    }

    /// Exhaustive search with shared prefix convolutions. Grids are walked
    /// from the largest action down, so on exact cost ties the first
    /// (kept) minimizer prefers larger thresholds, earlier horizons first.
    fn enumerate(&self) -> Vec<f64> {
        let horizon = self.horizons();
        let mut dist_stack: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
        let mut init = vec![0.0; horizon + 1];
        init[0] = 1.0;
        dist_stack.push(init);

        let mut choice = vec![0usize; horizon];
        let mut best_choice = vec![0usize; horizon];
        let mut best_cost = f64::INFINITY;
        self.enumerate_rec(
            0,
            0.0,
            &mut dist_stack,
            &mut choice,
            &mut best_cost,
            &mut best_choice,
        );
        best_choice
            .iter()
            .enumerate()
            .map(|(h, &idx)| self.grids[h][idx])
            .collect()
    }

    fn enumerate_rec(
        &self,
        h: usize,
        width_so_far: f64,
        dist_stack: &mut Vec<Vec<f64>>,
        choice: &mut [usize],
        best_cost: &mut f64,
        best_choice: &mut Vec<usize>,
    ) {
        let horizon = self.horizons();
        if h == horizon {
            let dist = dist_stack.last().expect("prefix distribution present");
            let mut shortfall = 0.0;
            for (rho, &mass) in dist.iter().enumerate().take(horizon + 1) {
                shortfall += mass * (rho as f64 / horizon as f64 - self.alpha_t).max(0.0);
            }
            let mut cost = shortfall + self.lambda * width_so_far;
            if let Some(lj) = self.inc_lambda {
                let actions: Vec<f64> = choice
                    .iter()
                    .enumerate()
                    .map(|(hh, &idx)| self.grids[hh][idx])
                    .collect();
                cost += objective_increasing_width(&actions, lj);
            }
            if cost < *best_cost {
                *best_cost = cost;
                best_choice.copy_from_slice(choice);
            }
            return;
        }
        for idx in (0..self.grids[h].len()).rev() {
            choice[h] = idx;
            let p = self.probs[h][idx];
            let prev = dist_stack.last().expect("prefix distribution present");
            let mut next = vec![0.0; horizon + 1];
            for i in 0..=h {
                let mass = prev[i];
                next[i] += mass * (1.0 - p);
                next[i + 1] += mass * p;
            }
            dist_stack.push(next);
            self.enumerate_rec(
                h + 1,
                width_so_far + 1.0 - self.grids[h][idx],
                dist_stack,
                choice,
                best_cost,
                best_choice,
            );
            dist_stack.pop();
        }
    }

    /// Large action spaces: extract a sequence from a backward dynamic
    /// program over `(horizon, error count)`, then polish it and the
    /// centers with exact coordinate descent, keeping the cheaper result.
    fn seed_and_polish(&self, centers: &[f64]) -> Vec<f64> {
        let dp_seed = self.dp_extract();
        let center_seed: Vec<usize> = centers
            .iter()
            .enumerate()
            .map(|(h, &c)| nearest_index(&self.grids[h], c))
            .collect();

        let mut best_choice = dp_seed.clone();
        let mut best_cost = f64::INFINITY;
        for seed in [dp_seed, center_seed] {
            let (choice, cost) = self.coordinate_descent(seed);
            if cost < best_cost {
                best_cost = cost;
                best_choice = choice;
            }
        }
        best_choice
            .iter()
            .enumerate()
            .map(|(h, &idx)| self.grids[h][idx])
            .collect()
    }

    /// Backward value iteration over `(h, rho)` assuming the remaining
    /// choices may react to the realized error count, then a forward pass
    /// along the expected error path to commit one action per horizon.
    fn dp_extract(&self) -> Vec<usize> {
        let horizon = self.horizons();
        let mut value = vec![0.0; horizon + 1];
        for (rho, v) in value.iter_mut().enumerate() {
            *v = (rho as f64 / horizon as f64 - self.alpha_t).max(0.0);
        }
        let mut policy: Vec<Vec<usize>> = vec![Vec::new(); horizon];
        for h in (0..horizon).rev() {
            let mut next_value = vec![0.0; h + 1];
            let mut stage_policy = vec![0usize; h + 1];
            for rho in 0..=h {
                let mut best = f64::INFINITY;
                let mut best_idx = 0;
                for idx in (0..self.grids[h].len()).rev() {
                    let p = self.probs[h][idx];
                    let w = self.lambda * (1.0 - self.grids[h][idx]);
                    let cost = w + p * value[rho + 1] + (1.0 - p) * value[rho];
                    if cost < best {
                        best = cost;
                        best_idx = idx;
                    }
                }
                next_value[rho] = best;
                stage_policy[rho] = best_idx;
            }
            value = next_value;
            policy[h] = stage_policy;
        }

        let mut expected_errors = 0.0f64;
        let mut choice = vec![0usize; horizon];
        for h in 0..horizon {
            let rho = (expected_errors.round() as usize).min(h);
            let idx = policy[h][rho];
            choice[h] = idx;
            expected_errors += self.probs[h][idx];
        }
        choice
    }

    /// Exact coordinate descent: re-optimizes one horizon at a time against
    /// the full expected cost until no single swap improves it.
    fn coordinate_descent(&self, mut choice: Vec<usize>) -> (Vec<usize>, f64) {
        let mut best = self.expected_cost(&choice);
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for h in 0..choice.len() {
                let original = choice[h];
                let mut best_idx = original;
                for idx in (0..self.grids[h].len()).rev() {
                    if idx == original {
                        continue;
                    }
                    choice[h] = idx;
                    let cost = self.expected_cost(&choice);
                    if cost < best {
                        best = cost;
                        best_idx = idx;
                        improved = true;
                    }
                }
                choice[h] = best_idx;
            }
            if !improved {
                break;
            }
        }
        (choice, best)
    }
}

/// Index of the grid entry closest to `value` (grids are small).
fn nearest_index(grid: &[f64], value: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &g) in grid.iter().enumerate() {
        let d = (g - value).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interval(center: f64, radius: f64) -> ThresholdInterval {
        ThresholdInterval { center, radius }
    }

    fn state_with(histories: &[&[f64]], alpha_t: f64, window: usize) -> OptimizerState {
        let mut state = OptimizerState::new(histories.len(), alpha_t, window);
        for (h, betas) in histories.iter().enumerate() {
            for &b in *betas {
                state.record_beta(h + 1, b).unwrap();
            }
        }
        state
    }

    /// Independent brute-force oracle: walks every action combination by
    /// odometer and every error pattern explicitly.
    fn oracle_min_cost(
        grids: &[Vec<f64>],
        betas: &[Vec<f64>],
        alpha_t: f64,
        lambda: f64,
        inc_lambda: Option<f64>,
    ) -> f64 {
        let horizon = grids.len();
        let mut idx = vec![0usize; horizon];
        let mut best = f64::INFINITY;
        loop {
            let actions: Vec<f64> = idx.iter().enumerate().map(|(h, &i)| grids[h][i]).collect();
            let ps: Vec<f64> = actions
                .iter()
                .zip(betas)
                .map(|(&u, f)| f.iter().filter(|&&b| u > b).count() as f64 / f.len() as f64)
                .collect();
            let mut expected_shortfall = 0.0;
            for pattern in 0..(1usize << horizon) {
                let mut prob = 1.0;
                let mut rho = 0usize;
                for (h, &p) in ps.iter().enumerate() {
                    if pattern & (1 << h) != 0 {
                        prob *= p;
                        rho += 1;
                    } else {
                        prob *= 1.0 - p;
                    }
                }
                expected_shortfall += prob * (rho as f64 / horizon as f64 - alpha_t).max(0.0);
            }
            let width: f64 = actions.iter().map(|&u| 1.0 - u).sum();
            let mut cost = expected_shortfall + lambda * width;
            if let Some(lj) = inc_lambda {
                cost += objective_increasing_width(&actions, lj);
            }
            if cost < best {
                best = cost;
            }

            let mut carry = 0;
            loop {
                if carry == horizon {
                    return best;
                }
                idx[carry] += 1;
                if idx[carry] < grids[carry].len() {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
        }
    }

    #[test]
    fn beta_history_evicts_oldest() {
        let mut hist = BetaHistory::new(3);
        for b in [0.5, 0.6, 0.7, 0.8] {
            hist.push(b).unwrap();
        }
        let values: Vec<f64> = hist.values().collect();
        assert_eq!(values, vec![0.6, 0.7, 0.8]);
    }

    #[test]
    fn beta_history_rejects_out_of_range() {
        let mut hist = BetaHistory::new(3);
        assert!(hist.push(0.0).is_err());
        assert!(hist.push(-0.1).is_err());
        assert!(hist.push(1.1).is_err());
        assert!(hist.push(1.0).is_ok()); // observation inside the tightest region
    }

    #[test]
    fn trimmed_keeps_values_below_theta_quantile() {
        let mut hist = BetaHistory::new(8);
        for b in [0.2, 0.4, 0.6, 0.8] {
            hist.push(b).unwrap();
        }
        // Oracle: sort, cutoff at the floor(theta*n)+1-th order statistic.
        let mut sorted = [0.2, 0.4, 0.6, 0.8];
        sorted.sort_by(f64::total_cmp);
        let cutoff = sorted[(0.5f64 * 4.0).floor() as usize]; // 1-based idx 3
        let expect: Vec<f64> = sorted.iter().copied().filter(|&b| b < cutoff).collect();
        assert_eq!(hist.trimmed(0.5), expect);
        assert_eq!(hist.trimmed(0.5), vec![0.2, 0.4]);
    }

    #[test]
    fn trimmed_with_theta_one_keeps_everything() {
        let mut hist = BetaHistory::new(4);
        for b in [0.9, 0.1, 0.5] {
            hist.push(b).unwrap();
        }
        assert_eq!(hist.trimmed(1.0), vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn trimmed_singleton_is_empty_and_effective_falls_back() {
        let mut hist = BetaHistory::new(4);
        hist.push(0.7).unwrap();
        assert!(hist.trimmed(0.5).is_empty());
        assert_eq!(hist.effective(0.5), vec![0.7]);
    }

    #[test]
    fn miscoverage_prob_counts_strictly() {
        let f = [0.2, 0.4, 0.6];
        assert!((miscoverage_prob(&f, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(miscoverage_prob(&f, 0.2), 0.0); // strict inequality
        assert_eq!(miscoverage_prob(&f, 0.7), 1.0);
    }

    #[test]
    fn adapt_target_examples() {
        let mut state = OptimizerState::new(1, 0.1, 4);
        state.adapt_target(0.2, 0.1, 0.01);
        assert!((state.alpha_t - 0.099).abs() < 1e-15);

        let mut fixed = OptimizerState::new(1, 0.1, 4);
        fixed.adapt_target(0.1, 0.1, 0.01);
        assert_eq!(fixed.alpha_t, 0.1);

        let mut up = OptimizerState::new(1, 0.1, 4);
        up.adapt_target(0.0, 0.1, 0.01);
        assert!((up.alpha_t - 0.101).abs() < 1e-15);
    }

    #[test]
    fn objective_coverage_width_examples() {
        // No simulated errors: pure width term.
        let c = objective_coverage_width(&[0.1, 0.1], &[0.2, 0.2], 0.1, 0.1);
        assert!((c - 0.18).abs() < 1e-15);

        // Both horizons miss: shortfall 0.9 plus width 1.4 * lambda.
        let c = objective_coverage_width(&[0.3, 0.3], &[0.2, 0.2], 0.1, 0.1);
        assert!((c - (0.9 + 0.1 * 1.4)).abs() < 1e-15);

        // lambda = 0: coverage penalty alone.
        let c = objective_coverage_width(&[0.3, 0.3], &[0.2, 0.2], 0.1, 0.0);
        assert!((c - 0.9).abs() < 1e-15);
    }

    #[test]
    fn objective_increasing_width_examples() {
        assert!((objective_increasing_width(&[0.2, 0.3], 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(objective_increasing_width(&[0.5, 0.4, 0.3], 1.0), 0.0);
        assert_eq!(objective_increasing_width(&[0.9, 0.95, 0.99], 0.0), 0.0);
    }

    #[test]
    fn solve_single_horizon_matches_hand_costs() {
        // Two actions, one recorded beta between them.
        let state = state_with(&[&[0.15]], 0.1, 8);
        let intervals = [interval(0.15, 0.05)]; // grid {0.1, 0.15, 0.2} at k=3
        let cfg = OptimizerConfig {
            lambda: 0.1,
            action_grid_k: 2, // endpoints only: {0.1, 0.2}
            ..OptimizerConfig::default()
        };
        // cost(0.1) = 0.1 * 0.9 = 0.09; cost(0.2) = 0.9 + 0.1 * 0.8 = 0.98.
        let picked = state.solve(&intervals, &cfg).unwrap();
        assert_eq!(picked, vec![intervals[0].low()]);
        assert!((picked[0] - 0.1).abs() < 1e-15);

        let heavy = OptimizerConfig {
            lambda: 10.0,
            action_grid_k: 2,
            ..OptimizerConfig::default()
        };
        // cost(0.1) = 9.0; cost(0.2) = 0.9 + 8.0 = 8.9: width wins.
        let picked = state.solve(&intervals, &heavy).unwrap();
        assert_eq!(picked, vec![intervals[0].high()]);
        assert!((picked[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn solve_with_all_betas_at_one_prefers_largest_thresholds() {
        let state = state_with(&[&[1.0, 1.0], &[1.0, 1.0]], 0.1, 8);
        let intervals = [interval(0.1, 0.02), interval(0.12, 0.02)];
        let cfg = OptimizerConfig {
            lambda: 0.1,
            action_grid_k: 5,
            ..OptimizerConfig::default()
        };
        let picked = state.solve(&intervals, &cfg).unwrap();
        assert_eq!(picked[0], intervals[0].high());
        assert_eq!(picked[1], intervals[1].high());
    }

    #[test]
    fn solve_falls_back_to_centers_without_history() {
        let state = OptimizerState::new(3, 0.1, 8);
        let intervals = [
            interval(0.1, 0.01),
            interval(0.2, 0.01),
            interval(0.3, 0.01),
        ];
        let picked = state
            .solve(&intervals, &OptimizerConfig::default())
            .unwrap();
        assert_eq!(picked, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn solve_rejects_empty_interval_list() {
        let state = OptimizerState::new(1, 0.1, 8);
        assert!(state.solve(&[], &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn solve_matches_bruteforce_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let horizons = rng.random_range(1..=4usize);
            let k = rng.random_range(1..=5usize);
            let mut hist_data = Vec::new();
            let mut intervals = Vec::new();
            for _ in 0..horizons {
                let m = rng.random_range(1..=12usize);
                let betas: Vec<f64> = (0..m)
                    .map(|_| rng.random_range(1..=100) as f64 / 100.0)
                    .collect();
                hist_data.push(betas);
                intervals.push(interval(
                    rng.random::<f64>() * 0.8 + 0.05,
                    rng.random::<f64>() * 0.1,
                ));
            }
            let refs: Vec<&[f64]> = hist_data.iter().map(Vec::as_slice).collect();
            let alpha_t = rng.random::<f64>() * 0.4;
            let state = state_with(&refs, alpha_t, 32);
            let cfg = OptimizerConfig {
                lambda: rng.random::<f64>() * 0.5,
                action_grid_k: k,
                theta: 1.0,
                ..OptimizerConfig::default()
            };
            let picked = state.solve(&intervals, &cfg).unwrap();
            for (u, iv) in picked.iter().zip(&intervals) {
                assert!(iv.contains(*u), "picked {u} outside interval");
            }

            let grids: Vec<Vec<f64>> = intervals.iter().map(|iv| action_grid(iv, k)).collect();
            let expect = oracle_min_cost(&grids, &hist_data, alpha_t, cfg.lambda, None);
            let probs: Vec<Vec<f64>> = grids
                .iter()
                .zip(&hist_data)
                .map(|(g, f)| g.iter().map(|&u| miscoverage_prob(f, u)).collect())
                .collect();
            let problem = ExactProblem {
                grids: &grids,
                probs: &probs,
                alpha_t,
                lambda: cfg.lambda,
                inc_lambda: None,
            };
            let choice: Vec<usize> = picked
                .iter()
                .enumerate()
                .map(|(h, &u)| nearest_index(&grids[h], u))
                .collect();
            let got = problem.expected_cost(&choice);
            assert!(
                (got - expect).abs() < 1e-9,
                "cost {got} differs from oracle minimum {expect}"
            );
        }
    }

    #[test]
    fn polish_path_stays_feasible_and_beats_centers() {
        // Large instance forces the non-enumeration path.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let horizons = 32;
        let mut state = OptimizerState::new(horizons, 0.1, 16);
        let mut intervals = Vec::new();
        for h in 1..=horizons {
            for _ in 0..10 {
                state
                    .record_beta(h, rng.random_range(1..=100) as f64 / 100.0)
                    .unwrap();
            }
            intervals.push(interval(0.05 + rng.random::<f64>() * 0.3, 0.03));
        }
        let cfg = OptimizerConfig {
            action_grid_k: 5,
            ..OptimizerConfig::default()
        };
        let picked = state.solve(&intervals, &cfg).unwrap();
        for (u, iv) in picked.iter().zip(&intervals) {
            assert!(iv.contains(*u));
        }

        // Exact expected cost must not exceed the centers' cost.
        let grids: Vec<Vec<f64>> = intervals.iter().map(|iv| action_grid(iv, 5)).collect();
        let betas: Vec<Vec<f64>> = (1..=horizons)
            .map(|h| state.history(h).effective(1.0))
            .collect();
        let probs: Vec<Vec<f64>> = grids
            .iter()
            .zip(&betas)
            .map(|(g, f)| g.iter().map(|&u| miscoverage_prob(f, u)).collect())
            .collect();
        let problem = ExactProblem {
            grids: &grids,
            probs: &probs,
            alpha_t: 0.1,
            lambda: cfg.lambda,
            inc_lambda: None,
        };
        let to_choice = |actions: &[f64]| -> Vec<usize> {
            actions
                .iter()
                .enumerate()
                .map(|(h, &u)| nearest_index(&grids[h], u))
                .collect()
        };
        let centers: Vec<f64> = intervals.iter().map(|iv| iv.center).collect();
        let picked_cost = problem.expected_cost(&to_choice(&picked));
        let center_cost = problem.expected_cost(&to_choice(&centers));
        assert!(picked_cost <= center_cost + 1e-12);
    }

    #[test]
    fn solve_generic_agrees_with_exact_solver_on_small_instances() {
        let state = state_with(&[&[0.1, 0.3, 0.5], &[0.2, 0.6]], 0.1, 8);
        let intervals = [interval(0.2, 0.05), interval(0.3, 0.05)];
        let cfg = OptimizerConfig {
            action_grid_k: 3,
            n_scenarios: 4000,
            ..OptimizerConfig::default()
        };
        let exact = state.solve(&intervals, &cfg).unwrap();
        let generic = state
            .solve_generic(
                &intervals,
                &cfg,
                |actions, betas| objective_coverage_width(actions, betas, 0.1, cfg.lambda),
                7,
            )
            .unwrap();

        // Same expected cost within Monte Carlo noise.
        let grids: Vec<Vec<f64>> = intervals.iter().map(|iv| action_grid(iv, 3)).collect();
        let betas: Vec<Vec<f64>> = vec![vec![0.1, 0.3, 0.5], vec![0.2, 0.6]];
        let probs: Vec<Vec<f64>> = grids
            .iter()
            .zip(&betas)
            .map(|(g, f)| g.iter().map(|&u| miscoverage_prob(f, u)).collect())
            .collect();
        let problem = ExactProblem {
            grids: &grids,
            probs: &probs,
            alpha_t: 0.1,
            lambda: cfg.lambda,
            inc_lambda: None,
        };
        let cost_of = |actions: &[f64]| {
            let choice: Vec<usize> = actions
                .iter()
                .enumerate()
                .map(|(h, &u)| nearest_index(&grids[h], u))
                .collect();
            problem.expected_cost(&choice)
        };
        assert!((cost_of(&generic) - cost_of(&exact)).abs() < 0.05);
    }

    #[test]
    fn solve_generic_returns_centers_for_point_intervals_or_flat_objectives() {
        let state = state_with(&[&[0.5], &[0.5]], 0.1, 8);
        let points = [interval(0.1, 0.0), interval(0.2, 0.0)];
        let cfg = OptimizerConfig::default();
        let picked = state
            .solve_generic(
                &points,
                &cfg,
                |a, b| objective_coverage_width(a, b, 0.1, 0.1),
                3,
            )
            .unwrap();
        assert_eq!(picked, vec![0.1, 0.2]);

        let wide = [interval(0.1, 0.05), interval(0.2, 0.05)];
        let flat = state.solve_generic(&wide, &cfg, |_, _| 1.0, 3).unwrap();
        assert_eq!(flat, vec![0.1, 0.2], "constant objective keeps the centers");
    }

    proptest! {
        /// Zero increasing-width penalty iff every step satisfies
        /// lambda_j * u_h <= u_{h-1}.
        #[test]
        fn increasing_width_zero_set(
            actions in proptest::collection::vec(0.0f64..1.0, 1..6),
            lambda_j in prop_oneof![Just(0.0), Just(0.5), Just(1.0), Just(2.0)],
        ) {
            let penalty = objective_increasing_width(&actions, lambda_j);
            let all_ok = actions.windows(2).all(|w| lambda_j * w[1] <= w[0]);
            prop_assert_eq!(penalty == 0.0, all_ok);
            prop_assert!(penalty >= 0.0);
        }

        /// Strictly more aggressive thresholds can only raise the
        /// miscoverage probability.
        #[test]
        fn miscoverage_prob_monotone(
            betas in proptest::collection::vec(0.01f64..1.0, 1..20),
            u1 in 0.0f64..1.2,
            u2 in 0.0f64..1.2,
        ) {
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(miscoverage_prob(&betas, lo) <= miscoverage_prob(&betas, hi));
        }

        /// Holding the error pattern fixed, the coverage-width objective
        /// strictly decreases as any threshold increases while the
        /// shortfall term is inactive.
        #[test]
        fn width_term_strictly_monotone(
            u in 0.1f64..0.8,
            bump in 0.01f64..0.1,
        ) {
            // Betas above every action: no simulated errors, J1 inactive.
            let betas = [1.0, 1.0];
            let lo = objective_coverage_width(&[u, u], &betas, 0.5, 0.2);
            let hi = objective_coverage_width(&[u + bump, u], &betas, 0.5, 0.2);
            prop_assert!(hi < lo);
        }
    }
}
