//! Maximum-likelihood estimation of `θ` and trajectory-KL diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{History, LinearParametrization, RewardFamily, Scenario};
use crate::scalar::{dot, Real};

/// Penalty returned when a likelihood evaluation underflows or diverges.
pub const NLL_CLAMP: f64 = 1e30;

/// How recorded states enter the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LikelihoodForm {
    /// Rewards only, with states re-simulated from `x_0` under the candidate `θ`.
    #[default]
    Regenerated,
    /// Rewards at the recorded states plus a Gaussian transition term
    /// `‖x_{i+1} - f(x_i, u_i, θ, i)‖² / (2 τ²)`.
    Joint { transition_scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleConfig {
    /// Grid points per parameter dimension (reduced automatically beyond four dimensions).
    pub grid_points: usize,
    pub refine_iterations: usize,
    pub shrink: f64,
    pub step_floor: f64,
    pub form: LikelihoodForm,
    /// Full re-summation period of the sufficient statistics.
    pub resum_interval: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            grid_points: 11,
            refine_iterations: 200,
            shrink: 0.5,
            step_floor: 1e-8,
            form: LikelihoodForm::Regenerated,
            resum_interval: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate<T> {
    pub theta_hat: Vec<T>,
    pub nll: T,
    pub grid_best: Vec<T>,
    pub refine_iterations: usize,
    /// Number of rewards the fit used.
    pub t_fit: usize,
    /// Every grid evaluation hit the penalty clamp.
    pub degenerate: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("the parameter set must be a box")]
    NonBoxParameterSet,
    #[error("history holds {0} rewards; at least {1} are needed")]
    NotEnoughData(usize, usize),
    #[error("the reward family has no closed-form KL divergence")]
    UnsupportedKl,
    #[error("parameter vector has length {found}, expected {expected}")]
    ParameterDimension { expected: usize, found: usize },
}

/// A likelihood value, possibly clamped at [`NLL_CLAMP`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllValue<T> {
    pub value: T,
    pub clamped: bool,
}

fn clamp_nll<T: Real>(v: T) -> NllValue<T> {
    let cap = T::lit(NLL_CLAMP);
    if v.is_finite() && v < cap {
        NllValue {
            value: v,
            clamped: false,
        }
    } else {
        NllValue {
            value: cap,
            clamped: true,
        }
    }
}

/// `-Σ log p(r_i | x_i^θ, u_i, θ)` with states regenerated from `x_0`.
pub fn neg_log_likelihood<T: Real>(scn: &Scenario<T>, hist: &History<T>, theta: &[T]) -> NllValue<T> {
    neg_log_likelihood_with(scn, hist, theta, LikelihoodForm::Regenerated)
}

pub fn neg_log_likelihood_with<T: Real>(
    scn: &Scenario<T>,
    hist: &History<T>,
    theta: &[T],
    form: LikelihoodForm,
) -> NllValue<T> {
    let reward = scn.reward();
    let mut total = T::zero();
    match form {
        LikelihoodForm::Regenerated => {
            let mut x = hist.states[0].clone();
            let mut next = vec![T::zero(); x.len()];
            for (i, (u, &r)) in hist.inputs.iter().zip(&hist.rewards).enumerate() {
                let mean = scn.mean_reward(&x, u, theta, i);
                total -= reward.log_density(r, mean);
                scn.model_step_into(&x, u, theta, i, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
        }
        LikelihoodForm::Joint { transition_scale } => {
            let denom = T::lit(2.0 * transition_scale * transition_scale);
            let mut pred = vec![T::zero(); hist.states[0].len()];
            for (i, (u, &r)) in hist.inputs.iter().zip(&hist.rewards).enumerate() {
                let x = &hist.states[i];
                total -= reward.log_density(r, scn.mean_reward(x, u, theta, i));
                scn.model_step_into(x, u, theta, i, &mut pred);
                let sq: T = pred
                    .iter()
                    .zip(&hist.states[i + 1])
                    .map(|(&p, &o)| (o - p) * (o - p))
                    .fold(T::zero(), |a, b| a + b);
                total += sq / denom;
            }
        }
    }
    clamp_nll(total)
}

/// The normalized log-likelihood ratio against `θ₀` along regenerated
/// trajectories: `(1/(t-1)) Σ log p(r_i | x_i^{θ₀}, u_i, θ₀) / p(r_i | x_i^θ, u_i, θ)`.
pub fn llr_objective<T: Real>(scn: &Scenario<T>, hist: &History<T>, theta: &[T]) -> T {
    let reward = scn.reward();
    let theta0 = scn.theta_true();
    let mut xa = hist.states[0].clone();
    let mut xb = hist.states[0].clone();
    let mut total = T::zero();
    for (i, (u, &r)) in hist.inputs.iter().zip(&hist.rewards).enumerate() {
        let la = reward.log_density(r, scn.mean_reward(&xa, u, theta0, i));
        let lb = reward.log_density(r, scn.mean_reward(&xb, u, theta, i));
        total += la - lb;
        xa = scn.model_step(&xa, u, theta0, i);
        xb = scn.model_step(&xb, u, theta, i);
    }
    let denom = T::from_usize(hist.rewards.len().saturating_sub(1).max(1)).unwrap();
    total / denom
}

/// `Σ_i KL(P_{x_i^a, u_i, θ_a} ‖ P_{x_i^b, u_i, θ_b})` along trajectories
/// regenerated from `x0` under each parameter, starting at time `t0`.
pub fn trajectory_kl<T: Real>(
    scn: &Scenario<T>,
    theta_a: &[T],
    theta_b: &[T],
    x0: &[T],
    inputs: &[Vec<T>],
    t0: usize,
) -> Result<T, EstimationError> {
    let reward = scn.reward();
    let mut xa = x0.to_vec();
    let mut xb = x0.to_vec();
    let mut total = T::zero();
    for (k, u) in inputs.iter().enumerate() {
        let t = t0 + k;
        let ha = scn.mean_reward(&xa, u, theta_a, t);
        let hb = scn.mean_reward(&xb, u, theta_b, t);
        total += reward.kl(ha, hb).ok_or(EstimationError::UnsupportedKl)?;
        xa = scn.model_step(&xa, u, theta_a, t);
        xb = scn.model_step(&xb, u, theta_b, t);
    }
    Ok(total)
}

/// Running sums that make the Gaussian joint likelihood a quadratic form in
/// the parameter features.
#[derive(Clone, Debug)]
struct SufficientStats<T> {
    count: usize,
    sum_r2: T,
    sum_r_psi: Vec<T>,
    sum_psi_psi: Vec<T>,
    sum_y2: T,
    sum_y_xi: Vec<T>,
    sum_xi_xi: Vec<T>,
    psi: Vec<T>,
    xi: Vec<Vec<T>>,
}

impl<T: Real> SufficientStats<T> {
    fn new() -> Self {
        Self {
            count: 0,
            sum_r2: T::zero(),
            sum_r_psi: Vec::new(),
            sum_psi_psi: Vec::new(),
            sum_y2: T::zero(),
            sum_y_xi: Vec::new(),
            sum_xi_xi: Vec::new(),
            psi: Vec::new(),
            xi: Vec::new(),
        }
    }

    fn add(&mut self, scn: &Scenario<T>, lin: &dyn LinearParametrization<T>, hist: &History<T>, i: usize) {
        let x = &hist.states[i];
        let u = &hist.inputs[i];
        let r = hist.rewards[i];
        lin.reward_data_features(x, u, i, &mut self.psi);
        lin.residual_data_features(x, u, i, &mut self.xi);
        let ph = self.psi.len();
        if self.sum_r_psi.is_empty() {
            self.sum_r_psi = vec![T::zero(); ph];
            self.sum_psi_psi = vec![T::zero(); ph * ph];
            let pg = self.xi.first().map_or(0, |v| v.len());
            self.sum_y_xi = vec![T::zero(); pg];
            self.sum_xi_xi = vec![T::zero(); pg * pg];
        }
        self.sum_r2 += r * r;
        for a in 0..ph {
            self.sum_r_psi[a] += r * self.psi[a];
            for b in 0..ph {
                self.sum_psi_psi[a * ph + b] += self.psi[a] * self.psi[b];
            }
        }
        let mut y = hist.states[i + 1].clone();
        let mut lin_part = scn.a().mul_vec(x);
        scn.b().mul_vec_acc(u, &mut lin_part);
        for (yj, lj) in y.iter_mut().zip(&lin_part) {
            *yj -= *lj;
        }
        let pg = self.sum_y_xi.len();
        for (j, xij) in self.xi.iter().enumerate() {
            self.sum_y2 += y[j] * y[j];
            for a in 0..pg {
                self.sum_y_xi[a] += y[j] * xij[a];
                for b in 0..pg {
                    self.sum_xi_xi[a * pg + b] += xij[a] * xij[b];
                }
            }
        }
        self.count += 1;
    }

    fn quadratic(sum_sq: T, cross: &[T], gram: &[T], phi: &[T]) -> T {
        let p = phi.len();
        let mut q = sum_sq - T::lit(2.0) * dot(cross, phi);
        for a in 0..p {
            for b in 0..p {
                q += phi[a] * gram[a * p + b] * phi[b];
            }
        }
        q
    }
}

/// Stateful estimator that keeps its sufficient statistics and warm start
/// across successive fits on a growing history.
#[derive(Clone, Debug)]
pub struct Estimator<T: Real> {
    config: MleConfig,
    stats: Option<SufficientStats<T>>,
    last: Option<ParameterEstimate<T>>,
}

struct Objective<'a, T: Real> {
    scn: &'a Scenario<T>,
    hist: &'a History<T>,
    form: LikelihoodForm,
    stats: Option<(&'a SufficientStats<T>, &'a dyn LinearParametrization<T>, T)>,
    phi_h: Vec<T>,
    phi_g: Vec<T>,
}

impl<T: Real> Objective<'_, T> {
    fn eval(&mut self, theta: &[T]) -> NllValue<T> {
        let Some((stats, lin, sigma)) = self.stats else {
            return neg_log_likelihood_with(self.scn, self.hist, theta, self.form);
        };
        let LikelihoodForm::Joint { transition_scale } = self.form else {
            unreachable!("statistics are only kept for the joint form")
        };
        lin.reward_param_features(theta, &mut self.phi_h);
        lin.residual_param_features(theta, &mut self.phi_g);
        let n = T::from_usize(stats.count).unwrap();
        let rew = SufficientStats::quadratic(stats.sum_r2, &stats.sum_r_psi, &stats.sum_psi_psi, &self.phi_h);
        let tr = SufficientStats::quadratic(stats.sum_y2, &stats.sum_y_xi, &stats.sum_xi_xi, &self.phi_g);
        let tau = T::lit(transition_scale);
        let norm = n * (sigma.ln() + T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()));
        // round-off can push the exact-fit quadratics slightly below zero
        let v =
            rew.max(T::zero()) / (T::lit(2.0) * sigma * sigma) + norm + tr.max(T::zero()) / (T::lit(2.0) * tau * tau);
        clamp_nll(v)
    }
}

fn grid_size(points: usize, dims: usize) -> usize {
    if dims <= 4 {
        points
    } else {
        ((points as f64).powf(4.0 / dims as f64).floor() as usize).max(2)
    }
}

impl<T: Real> Estimator<T> {
    pub fn new(config: MleConfig) -> Self {
        Self {
            config,
            stats: None,
            last: None,
        }
    }

    pub fn with_previous(config: MleConfig, prev: Option<ParameterEstimate<T>>) -> Self {
        Self {
            config,
            stats: None,
            last: prev,
        }
    }

    pub fn config(&self) -> &MleConfig {
        &self.config
    }

    pub fn last(&self) -> Option<&ParameterEstimate<T>> {
        self.last.as_ref()
    }

    fn uses_stats(&self, scn: &Scenario<T>) -> bool {
        matches!(self.config.form, LikelihoodForm::Joint { .. })
            && scn.linear_parametrization().is_some()
            && matches!(scn.reward().family, RewardFamily::Gaussian { sigma } if sigma > T::zero())
    }

    fn sync_stats(&mut self, scn: &Scenario<T>, hist: &History<T>) {
        let Some(lin) = scn.linear_parametrization() else {
            return;
        };
        let t = hist.len();
        let interval = self.config.resum_interval.max(1);
        let stale = match &self.stats {
            None => true,
            Some(s) => s.count > t || t / interval != s.count / interval,
        };
        if stale {
            self.stats = Some(SufficientStats::new());
        }
        let stats = self.stats.as_mut().expect("initialized above");
        for i in stats.count..t {
            stats.add(scn, lin, hist, i);
        }
    }

    /// Fits `θ̂` to the whole history; warm-starts from the previous fit.
    pub fn fit(&mut self, scn: &Scenario<T>, hist: &History<T>) -> Result<ParameterEstimate<T>, EstimationError> {
        let t = hist.rewards.len();
        if t < 2 {
            return Err(EstimationError::NotEnoughData(t, 2));
        }
        let (lo, hi) = scn.theta_set().as_box().ok_or(EstimationError::NonBoxParameterSet)?;
        let p = lo.len();
        let use_stats = self.uses_stats(scn);
        if use_stats {
            self.sync_stats(scn, hist);
        }
        let sigma = scn.reward().sigma().unwrap_or(T::one());
        let mut obj = Objective {
            scn,
            hist,
            form: self.config.form,
            stats: if use_stats {
                Some((
                    self.stats.as_ref().expect("synced"),
                    scn.linear_parametrization().expect("checked"),
                    sigma,
                ))
            } else {
                None
            },
            phi_h: Vec::new(),
            phi_g: Vec::new(),
        };

        let g = grid_size(self.config.grid_points.max(1), p);
        let spacing: Vec<T> = (0..p)
            .map(|j| {
                if g > 1 {
                    (hi[j] - lo[j]) / T::from_usize(g - 1).unwrap()
                } else {
                    hi[j] - lo[j]
                }
            })
            .collect();
        let point = |idx: &[usize]| -> Vec<T> {
            (0..p)
                .map(|j| {
                    if g > 1 {
                        (lo[j] + spacing[j] * T::from_usize(idx[j]).unwrap()).min(hi[j])
                    } else {
                        (lo[j] + hi[j]) / T::lit(2.0)
                    }
                })
                .collect()
        };
        let mut idx = vec![0usize; p];
        let mut grid_best = point(&idx);
        let mut grid_val = obj.eval(&grid_best);
        let mut all_clamped = grid_val.clamped;
        'grid: loop {
            let mut k = 0;
            loop {
                if k == p {
                    break 'grid;
                }
                idx[k] += 1;
                if idx[k] < g {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            let th = point(&idx);
            let v = obj.eval(&th);
            all_clamped &= v.clamped;
            if v.value < grid_val.value {
                grid_best = th;
                grid_val = v;
            }
        }

        let project = |th: &[T]| -> Vec<T> {
            th.iter()
                .zip(lo.iter().zip(&hi))
                .map(|(&v, (&l, &h))| v.max(l).min(h))
                .collect()
        };
        if all_clamped {
            let theta_hat = match &self.last {
                Some(prev) => project(&prev.theta_hat),
                None => scn.theta_set().center().unwrap_or_else(|_| lo.clone()),
            };
            let nll = obj.eval(&theta_hat).value;
            let est = ParameterEstimate {
                theta_hat,
                nll,
                grid_best,
                refine_iterations: 0,
                t_fit: t,
                degenerate: true,
            };
            self.last = Some(est.clone());
            return Ok(est);
        }

        let mut x = grid_best.clone();
        let mut fx = grid_val.value;
        if let Some(prev) = &self.last {
            let cand = project(&prev.theta_hat);
            if cand.len() == p {
                let v = obj.eval(&cand).value;
                if v < fx {
                    x = cand;
                    fx = v;
                }
            }
        }

        let mut step = spacing.clone();
        let width_scale: Vec<T> = (0..p).map(|j| T::one().max(hi[j] - lo[j])).collect();
        let floor = T::lit(self.config.step_floor);
        let shrink = T::lit(self.config.shrink);
        let mut iterations = 0;
        let mut trial = x.clone();
        while iterations < self.config.refine_iterations {
            if (0..p).all(|j| step[j] <= floor * width_scale[j]) {
                break;
            }
            iterations += 1;
            let mut best: Option<(Vec<T>, T)> = None;
            for j in 0..p {
                if step[j] <= T::zero() {
                    continue;
                }
                for sign in [-T::one(), T::one()] {
                    trial.copy_from_slice(&x);
                    trial[j] = (x[j] + sign * step[j]).max(lo[j]).min(hi[j]);
                    if trial[j] == x[j] {
                        continue;
                    }
                    let v = obj.eval(&trial).value;
                    if v < fx && best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                        best = Some((trial.clone(), v));
                    }
                }
            }
            match best {
                Some((nx, v)) => {
                    x = nx;
                    fx = v;
                }
                None => step.iter_mut().for_each(|s| *s *= shrink),
            }
        }
        let est = ParameterEstimate {
            theta_hat: x,
            nll: fx,
            grid_best,
            refine_iterations: iterations,
            t_fit: t,
            degenerate: false,
        };
        self.last = Some(est.clone());
        Ok(est)
    }
}

/// One-shot fit warm-started from `prev`.
pub fn mle_fit<T: Real>(
    scn: &Scenario<T>,
    hist: &History<T>,
    prev: Option<&ParameterEstimate<T>>,
    config: &MleConfig,
) -> Result<ParameterEstimate<T>, EstimationError> {
    Estimator::with_previous(config.clone(), prev.cloned()).fit(scn, hist)
}

/// `(t, D_{Π_t}(θ₀ ‖ θ̂_t) / (t - 1))` for each `(t, θ̂_t)` pair, where `Π_t`
/// is the first `t` recorded inputs.
pub fn concentration_curve<T: Real>(
    scn: &Scenario<T>,
    hist: &History<T>,
    estimates: &[(usize, Vec<T>)],
) -> Result<Vec<(usize, T)>, EstimationError> {
    estimates
        .iter()
        .map(|(t, theta)| {
            if theta.len() != scn.param_dim() {
                return Err(EstimationError::ParameterDimension {
                    expected: scn.param_dim(),
                    found: theta.len(),
                });
            }
            let t = (*t).min(hist.len());
            let kl = trajectory_kl(scn, scn.theta_true(), theta, &hist.states[0], &hist.inputs[..t], 0)?;
            let denom = T::from_usize(t.saturating_sub(1).max(1)).unwrap();
            Ok((t, kl / denom))
        })
        .collect()
}

/// Least-squares `(a, b)` of `y ≈ a / √(t - 1) + b`.
pub fn fit_inverse_sqrt(points: &[(usize, f64)]) -> Option<(f64, f64)> {
    let xs: Vec<f64> = points
        .iter()
        .map(|&(t, _)| 1.0 / ((t.max(2) - 1) as f64).sqrt())
        .collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    linear_fit(&xs, &ys)
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `log |y| + guard` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64], guard: f64) -> Option<f64> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| (y.abs() + guard).ln()).collect();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}
