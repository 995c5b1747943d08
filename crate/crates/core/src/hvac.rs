//! Single-zone HVAC benchmark: room temperature driven by cooling duty cycle,
//! outside temperature `v_t`, occupant heat load `q_t` and a peak-priced tariff.
//!
//! `x⁺ = k_r x − k_c u + k_v v_t + q_t` with cost `γ₁ p_t u + (x − γ₂ − v_t)²`.
//! The unknown parameter is `θ = [q_mean, γ₁, γ₂]`; the load keeps its known
//! sinusoidal shape around the unknown mean.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    Exogenous, LinearParametrization, MeanReward, Residual, RewardModel, Scenario, ScenarioError, ScenarioParts,
};
use crate::linalg::Matrix;
use crate::polytope::{pontryagin_diff, safe_input_set_tightened, HPolytope, InvariantSetCertificate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvacParams {
    pub k_r: f64,
    pub k_c: f64,
    pub k_v: f64,
    pub sigma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub v_mean: f64,
    pub v_amplitude: f64,
    /// Step of the day at which `v_t` peaks.
    pub v_peak_step: f64,
    pub q_mean: f64,
    pub q_amplitude: f64,
    pub q_peak_step: f64,
    /// Steps per day.
    pub period: usize,
    pub x_bounds: [f64; 2],
    pub u_bounds: [f64; 2],
    /// Half-open step range `[start, end)` of the peak tariff.
    pub peak_window: [usize; 2],
    pub price_off_peak: f64,
    pub price_peak: f64,
    pub q_mean_bounds: [f64; 2],
    pub gamma1_bounds: [f64; 2],
    pub gamma2_bounds: [f64; 2],
    /// Closed-loop pole `k_r − k_c K` of the terminal feedback.
    pub closed_loop_pole: f64,
    /// `(x, u)` through which the affine terminal feedback passes.
    pub operating_point: [f64; 2],
    /// Midpoint of `x_bounds` when absent.
    pub x0: Option<f64>,
}

impl Default for HvacParams {
    fn default() -> Self {
        Self {
            k_r: 0.64,
            k_c: 2.64,
            k_v: 0.10,
            sigma: 1.0,
            gamma1: 1.0,
            gamma2: 15.0,
            v_mean: 6.98,
            v_amplitude: 2.0,
            v_peak_step: 60.0,
            q_mean: 7.882,
            q_amplitude: 0.5,
            q_peak_step: 52.0,
            period: 96,
            x_bounds: [20.0, 24.0],
            u_bounds: [0.0, 0.5],
            peak_window: [48, 72],
            price_off_peak: 1.0,
            price_peak: 3.0,
            q_mean_bounds: [6.0, 10.0],
            gamma1_bounds: [0.0, 3.0],
            gamma2_bounds: [12.0, 18.0],
            closed_loop_pole: 0.5,
            operating_point: [22.0, 0.25],
            x0: None,
        }
    }
}

impl HvacParams {
    /// Published load level and the wide daily swings; the resulting
    /// disturbance range is wider than the robust tube `X` can absorb, so
    /// [`build_hvac_scenario`] rejects it.
    pub fn paper_literal() -> Self {
        Self {
            q_mean: 17.0,
            v_amplitude: 4.0,
            q_amplitude: 2.0,
            gamma2: 14.0,
            q_mean_bounds: [12.0, 20.0],
            ..Self::default()
        }
    }

    pub fn theta_true(&self) -> Vec<f64> {
        vec![self.q_mean, self.gamma1, self.gamma2]
    }

    pub fn validate(&self) -> Result<(), HvacError> {
        let bad = |m: &str| Err(HvacError::Params(m.to_string()));
        let finite = [
            self.k_r,
            self.k_c,
            self.k_v,
            self.sigma,
            self.gamma1,
            self.gamma2,
            self.v_mean,
            self.v_amplitude,
            self.v_peak_step,
            self.q_mean,
            self.q_amplitude,
            self.q_peak_step,
            self.price_off_peak,
            self.price_peak,
            self.closed_loop_pole,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("constants must be finite");
        }
        if self.period == 0 {
            return bad("period must be positive");
        }
        if self.k_c == 0.0 {
            return bad("k_c must be nonzero");
        }
        if self.sigma < 0.0 {
            return bad("sigma must be nonnegative");
        }
        for (name, [lo, hi]) in [
            ("x_bounds", self.x_bounds),
            ("u_bounds", self.u_bounds),
            ("q_mean_bounds", self.q_mean_bounds),
            ("gamma1_bounds", self.gamma1_bounds),
            ("gamma2_bounds", self.gamma2_bounds),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(HvacError::Params(format!("{name} must be ordered and finite")));
            }
        }
        if self.peak_window[0] > self.peak_window[1] || self.peak_window[1] > self.period {
            return bad("peak window must be an ordered range within one period");
        }
        if self.closed_loop_pole.abs() >= 1.0 {
            return bad("closed-loop pole must lie strictly inside the unit interval");
        }
        Ok(())
    }

    fn phase(&self, peak: f64) -> f64 {
        PI / 2.0 - 2.0 * PI * peak / self.period as f64
    }

    fn wave(&self, t: usize, peak: f64) -> f64 {
        let s = (t % self.period) as f64 / self.period as f64;
        (2.0 * PI * s + self.phase(peak)).sin()
    }

    fn price(&self, t: usize) -> f64 {
        let s = t % self.period;
        if (self.peak_window[0]..self.peak_window[1]).contains(&s) {
            self.price_peak
        } else {
            self.price_off_peak
        }
    }

    /// Known part of `g`: `k_v v_t + q_amp · sin(·)`.
    fn known_drive(&self, t: usize) -> f64 {
        self.k_v * exogenous_signal(SignalKind::OutsideTemperature, t, self)
            + self.q_amplitude * self.wave(t, self.q_peak_step)
    }

    /// Terminal feedback `(K, k)` with `u = K x + k`.
    pub fn terminal_feedback(&self) -> (f64, f64) {
        let gain = (self.k_r - self.closed_loop_pole) / self.k_c;
        let [x_ref, u_ref] = self.operating_point;
        (gain, u_ref - gain * x_ref)
    }

    /// Exact range of `g(·, ·, θ₀, t)` over one period.
    pub fn disturbance_range(&self) -> [f64; 2] {
        (0..self.period)
            .map(|t| self.known_drive(t) + self.q_mean)
            .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], g| [lo.min(g), hi.max(g)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// `v_t`, °C.
    OutsideTemperature,
    /// `q_t` at the configured load mean.
    HeatLoad,
    /// `p_t`.
    Price,
}

pub fn exogenous_signal(kind: SignalKind, t: usize, params: &HvacParams) -> f64 {
    match kind {
        SignalKind::OutsideTemperature => params.v_mean + params.v_amplitude * params.wave(t, params.v_peak_step),
        SignalKind::HeatLoad => params.q_mean + params.q_amplitude * params.wave(t, params.q_peak_step),
        SignalKind::Price => params.price(t),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HvacError {
    #[error("invalid HVAC parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("HVAC scenario is not feasible: {0}")]
    Infeasible(String),
}

/// `g = k_v v_t + θ_q + q_amp sin(·)`; independent of `x` and `u`.
#[derive(Debug, Clone)]
pub struct HvacResidual {
    params: HvacParams,
}

impl HvacResidual {
    pub fn new(params: HvacParams) -> Self {
        Self { params }
    }
}

impl Residual<f64> for HvacResidual {
    fn name(&self) -> &str {
        "hvac"
    }

    fn eval(&self, _x: &[f64], _u: &[f64], theta: &[f64], t: usize, out: &mut [f64]) {
        out[0] = self.params.known_drive(t) + theta[0];
    }

    fn jacobians(&self, _x: &[f64], _u: &[f64], _theta: &[f64], _t: usize, jx: &mut [f64], ju: &mut [f64]) {
        jx.fill(0.0);
        ju.fill(0.0);
    }
}

/// `h = −(γ₁ p_t u + (x − γ₂ − v_t)²)`.
#[derive(Debug, Clone)]
pub struct HvacReward {
    params: HvacParams,
}

impl HvacReward {
    pub fn new(params: HvacParams) -> Self {
        Self { params }
    }

    fn comfort_gap(&self, x: f64, theta: &[f64], t: usize) -> f64 {
        x - theta[2] - exogenous_signal(SignalKind::OutsideTemperature, t, &self.params)
    }
}

impl MeanReward<f64> for HvacReward {
    fn name(&self) -> &str {
        "hvac"
    }

    fn eval(&self, x: &[f64], u: &[f64], theta: &[f64], t: usize) -> f64 {
        let gap = self.comfort_gap(x[0], theta, t);
        -(theta[1] * self.params.price(t) * u[0] + gap * gap)
    }

    fn gradients(&self, x: &[f64], u: &[f64], theta: &[f64], t: usize, gx: &mut [f64], gu: &mut [f64]) {
        let _ = u;
        gx[0] = -2.0 * self.comfort_gap(x[0], theta, t);
        gu[0] = -theta[1] * self.params.price(t);
    }
}

/// `h = [γ₁, 1, γ₂, γ₂²] · [−p u, −(x − v)², 2(x − v), −1]` and
/// `g = [1, θ_q] · [k_v v + q_amp sin, 1]`.
#[derive(Debug, Clone)]
pub struct HvacFeatures {
    params: HvacParams,
}

impl HvacFeatures {
    pub fn new(params: HvacParams) -> Self {
        Self { params }
    }
}

impl LinearParametrization<f64> for HvacFeatures {
    fn reward_param_features(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend([theta[1], 1.0, theta[2], theta[2] * theta[2]]);
    }

    fn reward_data_features(&self, x: &[f64], u: &[f64], t: usize, out: &mut Vec<f64>) {
        let d = x[0] - exogenous_signal(SignalKind::OutsideTemperature, t, &self.params);
        out.clear();
        out.extend([-self.params.price(t) * u[0], -d * d, 2.0 * d, -1.0]);
    }

    fn residual_param_features(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend([1.0, theta[0]]);
    }

    fn residual_data_features(&self, _x: &[f64], _u: &[f64], t: usize, out: &mut Vec<Vec<f64>>) {
        out.clear();
        out.push(vec![self.params.known_drive(t), 1.0]);
    }
}

/// `[v_t, q_t, p_t]` at the configured load mean.
#[derive(Debug, Clone)]
pub struct HvacSignals {
    params: HvacParams,
}

impl HvacSignals {
    pub fn new(params: HvacParams) -> Self {
        Self { params }
    }
}

impl Exogenous<f64> for HvacSignals {
    fn names(&self) -> Vec<String> {
        vec!["v".into(), "q".into(), "p".into()]
    }

    fn values(&self, t: usize) -> Vec<f64> {
        [SignalKind::OutsideTemperature, SignalKind::HeatLoad, SignalKind::Price]
            .iter()
            .map(|&k| exogenous_signal(k, t, &self.params))
            .collect()
    }
}

/// Scenario pieces without the feasibility self-check.
pub fn hvac_parts(params: &HvacParams) -> Result<ScenarioParts<f64>, HvacError> {
    params.validate()?;
    let [w_lo, w_hi] = params.disturbance_range();
    if !(w_lo.is_finite() && w_hi.is_finite()) {
        return Err(HvacError::Params("disturbance range is not representable".into()));
    }
    let interval = |[lo, hi]: [f64; 2]| HPolytope::interval(lo, hi);
    let (gain, feedforward) = params.terminal_feedback();
    let theta_lo = [
        params.q_mean_bounds[0],
        params.gamma1_bounds[0],
        params.gamma2_bounds[0],
    ];
    let theta_hi = [
        params.q_mean_bounds[1],
        params.gamma1_bounds[1],
        params.gamma2_bounds[1],
    ];
    let shared = params.clone();
    Ok(ScenarioParts {
        name: "hvac".into(),
        a: Matrix::scalar(params.k_r),
        b: Matrix::scalar(-params.k_c),
        nominal_offset: vec![0.5 * (w_lo + w_hi)],
        residual: Arc::new(HvacResidual::new(shared.clone())),
        theta_true: params.theta_true(),
        theta_set: HPolytope::from_box(&theta_lo, &theta_hi).map_err(ScenarioError::from)?,
        w: interval([w_lo, w_hi]).map_err(ScenarioError::from)?,
        x: interval(params.x_bounds).map_err(ScenarioError::from)?,
        u: interval(params.u_bounds).map_err(ScenarioError::from)?,
        reward: RewardModel::gaussian(Arc::new(HvacReward::new(shared.clone())), params.sigma),
        feedback_gain: Matrix::scalar(gain),
        feedforward: vec![feedforward],
        x0: vec![params.x0.unwrap_or(0.5 * (params.x_bounds[0] + params.x_bounds[1]))],
        exogenous: Some(Arc::new(HvacSignals::new(shared.clone()))),
        linear: Some(Arc::new(HvacFeatures::new(shared))),
        lipschitz: None,
        validation_span: params.period,
    })
}

/// Builds the scenario and checks that it is operable: `Ω` certifies and
/// contains `x₀`, and every vertex of `Ω` has a nonempty safe input set.
pub fn build_hvac_scenario(params: &HvacParams) -> Result<Scenario<f64>, HvacError> {
    let scn = Scenario::new(hvac_parts(params)?)?;
    feasibility_check(&scn)?;
    Ok(scn)
}

pub fn feasibility_check(scn: &Scenario<f64>) -> Result<InvariantSetCertificate<f64>, HvacError> {
    let infeasible = |m: String| HvacError::Infeasible(m);
    let cert = scn
        .certificate()
        .map_err(|e| infeasible(format!("invariant set: {e}")))?;
    if !cert.is_certified() {
        return Err(infeasible("invariant set is not certified".into()));
    }
    if !cert.omega.contains(scn.x0(), 1e-9) {
        return Err(infeasible(format!(
            "x0 = {:?} lies outside the invariant set",
            scn.x0()
        )));
    }
    let target = pontryagin_diff(&cert.omega, scn.w()).map_err(|e| infeasible(format!("Ω ⊖ W: {e}")))?;
    let zero = vec![0.0; scn.state_dim()];
    let vertices = cert.omega.vertices().map_err(ScenarioError::from)?;
    for v in vertices {
        safe_input_set_tightened(&v, scn.a(), scn.b(), &zero, &target, scn.u_set())
            .map_err(|e| infeasible(format!("no safe input at x = {v:?}: {e}")))?;
    }
    Ok(cert)
}
