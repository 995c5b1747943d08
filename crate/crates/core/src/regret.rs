//! N-step dynamic regret of a learning policy against the finite-horizon
//! oracle, replicate aggregation and scaling-law diagnostics.
//!
//! Regret is measured in expected rewards: the gap at step `t` is
//! `h(x_t, u_t, θ₀, t) − h(x'_t, u'_t, θ₀, t)` where `(x, u)` follow the oracle
//! and `(x', u')` the learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{History, Scenario};
use crate::estimation::log_log_slope;
use crate::policy::{run, PolicyConfig, PolicyError, PolicyMode};
use crate::polytope::InvariantSetCertificate;
use crate::streams::{mix64, SeedRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegretError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("series have different time grids or replicate counts")]
    GridMismatch,
    #[error("need at least {needed} grid points with t >= {t_min}, found {found}")]
    TooFewPoints { needed: usize, found: usize, t_min: usize },
    #[error("at least one replicate is required")]
    NoReplicates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub oracle_hist: History<f64>,
    pub learner_hist: History<f64>,
    pub seed_record: SeedRecord,
}

/// Cumulative series sampled on `t_grid` for each replicate, with the
/// across-replicate mean and standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Number of steps summed at each point (`Σ_{t < n}`).
    pub t_grid: Vec<usize>,
    /// One row per replicate.
    pub per_replicate: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over `√R`; zero when `R = 1`.
    pub std_error: Vec<f64>,
    /// Mean regret in realized (noisy) rewards, when tracked.
    pub realized_mean: Option<Vec<f64>>,
    pub seeds: Vec<SeedRecord>,
}

pub type RegretCurve = Curve;

/// Powers of two up to `steps`, then `steps` itself; `1..=steps` when `full`.
pub fn time_grid(steps: usize, full: bool) -> Vec<usize> {
    if full {
        return (1..=steps).collect();
    }
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |&n| n.checked_mul(2))
        .take_while(|&n| n <= steps)
        .collect();
    if steps > 0 && grid.last() != Some(&steps) {
        grid.push(steps);
    }
    grid
}

fn sample_cumulative(per_step: &[f64], grid: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut done = 0;
    for &n in grid {
        for v in &per_step[done..n] {
            acc += v;
        }
        done = n;
        out.push(acc);
    }
    out
}

fn mean_and_error(rows: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let r = rows.len() as f64;
    let mut mean = vec![0.0; len];
    let mut err = vec![0.0; len];
    for j in 0..len {
        mean[j] = rows.iter().map(|row| row[j]).sum::<f64>() / r;
        if rows.len() > 1 {
            let var = rows.iter().map(|row| (row[j] - mean[j]).powi(2)).sum::<f64>() / (r - 1.0);
            err[j] = (var / r).sqrt();
        }
    }
    (mean, err)
}

impl Curve {
    pub fn from_rows(
        t_grid: Vec<usize>,
        per_replicate: Vec<Vec<f64>>,
        seeds: Vec<SeedRecord>,
    ) -> Result<Self, RegretError> {
        if per_replicate.is_empty() {
            return Err(RegretError::NoReplicates);
        }
        if per_replicate.iter().any(|row| row.len() != t_grid.len()) {
            return Err(RegretError::GridMismatch);
        }
        let (mean, std_error) = mean_and_error(&per_replicate, t_grid.len());
        Ok(Self {
            t_grid,
            per_replicate,
            mean,
            std_error,
            realized_mean: None,
            seeds,
        })
    }

    pub fn replicates(&self) -> usize {
        self.per_replicate.len()
    }

    /// Median over replicates at each grid point.
    pub fn median(&self) -> Vec<f64> {
        (0..self.t_grid.len())
            .map(|j| median(self.per_replicate.iter().map(|row| row[j]).collect()))
            .collect()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn oracle_config(cfg: &PolicyConfig) -> PolicyConfig {
    PolicyConfig {
        mode: PolicyMode::Oracle,
        ..cfg.clone()
    }
}

/// Reward noise for the oracle run; its decision stream is never drawn from.
fn oracle_reward_rng(seeds: &SeedRecord) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seeds.oracle))
}

/// Oracle closed loop under `cfg`'s horizon. Oracle decisions consume no
/// randomness and rewards do not feed back, so states and inputs are the
/// same for every seed.
pub fn oracle_trajectory(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    steps: usize,
) -> Result<History<f64>, RegretError> {
    let seeds = SeedRecord::new(cfg.seed, 0);
    let mut decisions = ChaCha8Rng::seed_from_u64(seeds.oracle);
    let (hist, _) = run(
        scn,
        cert,
        &oracle_config(cfg),
        steps,
        &mut decisions,
        &mut oracle_reward_rng(&seeds),
    )?;
    Ok(hist)
}

fn redraw_rewards(scn: &Scenario<f64>, template: &History<f64>, seeds: &SeedRecord) -> History<f64> {
    let mut hist = template.clone();
    let mut rng = oracle_reward_rng(seeds);
    for t in 0..hist.len() {
        hist.rewards[t] = scn.sample_reward(&hist.states[t], &hist.inputs[t], t, &mut rng);
    }
    hist
}

fn learner_run(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    steps: usize,
    seeds: &SeedRecord,
) -> Result<History<f64>, RegretError> {
    let mut decisions = ChaCha8Rng::seed_from_u64(seeds.learner);
    let mut rewards = ChaCha8Rng::seed_from_u64(seeds.reward);
    Ok(run(scn, cert, cfg, steps, &mut decisions, &mut rewards)?.0)
}

/// Oracle and learner runs from the same `x₀` with the streams of `seeds`.
pub fn run_pair(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    steps: usize,
    seeds: SeedRecord,
) -> Result<TrajectoryPair, RegretError> {
    let oracle = oracle_trajectory(scn, cert, cfg, steps)?;
    run_pair_cached(scn, cert, cfg, &oracle, seeds)
}

/// As [`run_pair`] reusing a precomputed [`oracle_trajectory`]; the oracle's
/// rewards are redrawn from this replicate's stream.
pub fn run_pair_cached(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    oracle: &History<f64>,
    seeds: SeedRecord,
) -> Result<TrajectoryPair, RegretError> {
    Ok(TrajectoryPair {
        oracle_hist: redraw_rewards(scn, oracle, &seeds),
        learner_hist: learner_run(scn, cert, cfg, oracle.len(), &seeds)?,
        seed_record: seeds,
    })
}

/// Per-step expected reward `h(x_t, u_t, θ₀, t)` along a history.
pub fn expected_rewards(scn: &Scenario<f64>, hist: &History<f64>) -> Vec<f64> {
    (0..hist.len())
        .map(|t| scn.mean_reward(&hist.states[t], &hist.inputs[t], scn.theta_true(), t))
        .collect()
}

/// Per-step expected-reward gaps, oracle minus learner.
pub fn regret_increments(pair: &TrajectoryPair, scn: &Scenario<f64>) -> Vec<f64> {
    let oracle = expected_rewards(scn, &pair.oracle_hist);
    let learner = expected_rewards(scn, &pair.learner_hist);
    oracle.iter().zip(&learner).map(|(a, b)| a - b).collect()
}

fn realized_increments(pair: &TrajectoryPair) -> Vec<f64> {
    pair.oracle_hist
        .rewards
        .iter()
        .zip(&pair.learner_hist.rewards)
        .map(|(a, b)| a - b)
        .collect()
}

/// Single-replicate regret curve on the geometric grid.
pub fn dynamic_regret(pair: &TrajectoryPair, scn: &Scenario<f64>) -> RegretCurve {
    dynamic_regret_on(pair, scn, false)
}

pub fn dynamic_regret_on(pair: &TrajectoryPair, scn: &Scenario<f64>, full: bool) -> RegretCurve {
    let grid = time_grid(pair.learner_hist.len(), full);
    let row = sample_cumulative(&regret_increments(pair, scn), &grid);
    let realized = sample_cumulative(&realized_increments(pair), &grid);
    let mut curve = Curve::from_rows(grid, vec![row], vec![pair.seed_record]).expect("one row on its own grid");
    curve.realized_mean = Some(realized);
    curve
}

/// `replicates` independent pairs; replicate `i` uses `SeedRecord::new(master, i)`.
/// Replicates run on the current rayon pool; results are collected in
/// replicate order.
pub fn replicate(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    steps: usize,
    replicates: usize,
    master_seed: u64,
    full: bool,
) -> Result<RegretCurve, RegretError> {
    if replicates == 0 {
        return Err(RegretError::NoReplicates);
    }
    let oracle = oracle_trajectory(scn, cert, cfg, steps)?;
    let grid = time_grid(steps, full);
    let rows: Vec<(Vec<f64>, Vec<f64>, SeedRecord)> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let pair = run_pair_cached(scn, cert, cfg, &oracle, SeedRecord::new(master_seed, i))?;
            Ok((
                sample_cumulative(&regret_increments(&pair, scn), &grid),
                sample_cumulative(&realized_increments(&pair), &grid),
                pair.seed_record,
            ))
        })
        .collect::<Result<_, RegretError>>()?;
    let realized: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    let seeds = rows.iter().map(|r| r.2).collect();
    let mut curve = Curve::from_rows(grid, rows.into_iter().map(|r| r.0).collect(), seeds)?;
    curve.realized_mean = Some(mean_and_error(&realized, curve.t_grid.len()).0);
    Ok(curve)
}

/// Cumulative expected cost `−Σ h(x'_t, u'_t, θ₀, t)` of the learner under
/// `cfg`, one row per replicate.
pub fn expected_cost_curve(
    scn: &Scenario<f64>,
    cert: &InvariantSetCertificate<f64>,
    cfg: &PolicyConfig,
    steps: usize,
    replicates: usize,
    master_seed: u64,
    full: bool,
) -> Result<Curve, RegretError> {
    if replicates == 0 {
        return Err(RegretError::NoReplicates);
    }
    let grid = time_grid(steps, full);
    let rows: Vec<(Vec<f64>, SeedRecord)> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let seeds = SeedRecord::new(master_seed, i);
            let hist = learner_run(scn, cert, cfg, steps, &seeds)?;
            let costs: Vec<f64> = expected_rewards(scn, &hist).iter().map(|h| -h).collect();
            Ok((sample_cumulative(&costs, &grid), seeds))
        })
        .collect::<Result<_, RegretError>>()?;
    let seeds = rows.iter().map(|r| r.1).collect();
    Curve::from_rows(grid, rows.into_iter().map(|r| r.0).collect(), seeds)
}

/// Pointwise `a − b`, paired replicate by replicate.
pub fn cost_gap(a: &Curve, b: &Curve) -> Result<Curve, RegretError> {
    if a.t_grid != b.t_grid || a.replicates() != b.replicates() {
        return Err(RegretError::GridMismatch);
    }
    let rows = a
        .per_replicate
        .iter()
        .zip(&b.per_replicate)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect();
    Curve::from_rows(a.t_grid.clone(), rows, a.seeds.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub t: Vec<usize>,
    pub mean_regret: Vec<f64>,
    /// `mean_regret / (√T (ln T)²)`.
    pub rho: Vec<f64>,
    /// Per-point median over replicates of each replicate's `ρ`.
    pub median_rho: Vec<f64>,
    /// Least-squares slope of `ln(|regret| + 10⁻⁹)` against `ln T`.
    pub log_log_slope: f64,
}

impl ScalingReport {
    /// `median_rho` does not increase over the last `k` grid points.
    pub fn tail_non_increasing(&self, k: usize) -> bool {
        let tail = &self.median_rho[self.median_rho.len().saturating_sub(k)..];
        tail.windows(2).all(|w| w[1] <= w[0])
    }
}

pub const SLOPE_GUARD: f64 = 1e-9;

fn bound_shape(t: f64) -> f64 {
    t.sqrt() * t.ln().powi(2)
}

/// [`scaling_fit_from`] over grid points with `T ≥ 100`.
pub fn scaling_fit(curve: &Curve) -> Result<ScalingReport, RegretError> {
    scaling_fit_from(curve, 100)
}

pub fn scaling_fit_from(curve: &Curve, t_min: usize) -> Result<ScalingReport, RegretError> {
    let idx: Vec<usize> = (0..curve.t_grid.len()).filter(|&j| curve.t_grid[j] >= t_min).collect();
    if idx.len() < 4 {
        return Err(RegretError::TooFewPoints {
            needed: 4,
            found: idx.len(),
            t_min,
        });
    }
    let t: Vec<usize> = idx.iter().map(|&j| curve.t_grid[j]).collect();
    let mean_regret: Vec<f64> = idx.iter().map(|&j| curve.mean[j]).collect();
    let rho = t
        .iter()
        .zip(&mean_regret)
        .map(|(&n, r)| r / bound_shape(n as f64))
        .collect();
    let median_rho = idx
        .iter()
        .map(|&j| {
            let shape = bound_shape(curve.t_grid[j] as f64);
            median(curve.per_replicate.iter().map(|row| row[j] / shape).collect())
        })
        .collect();
    let xs: Vec<f64> = t.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&xs, &mean_regret, SLOPE_GUARD).expect("at least four points");
    Ok(ScalingReport {
        t,
        mean_regret,
        rho,
        median_rho,
        log_log_slope: slope,
    })
}

#[cfg(test)]
mod tests;
