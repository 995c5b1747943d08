//! Plant, nominal and learned models, stochastic rewards and recorded history.
//!
//! The true plant is `x⁺ = A x + B u + g(x, u, θ₀, t)`; the controller's
//! nominal model drops `g` in favour of a constant offset `c` (zero unless the
//! scenario regulates around a non-origin operating point).

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::polytope::{HPolytope, PolytopeError};
use crate::scalar::Real;

/// Forward-difference step used when a model has no analytic derivatives.
pub fn fd_step<T: Real>() -> T {
    T::lit(1e-6).max(T::epsilon().sqrt())
}

/// Parameterized residual `g(x, u, θ, t)` of the true dynamics.
pub trait Residual<T: Real>: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn eval(&self, x: &[T], u: &[T], theta: &[T], t: usize, out: &mut [T]);

    /// Jacobians `∂g/∂x` (n×n) and `∂g/∂u` (n×m), row-major.
    fn jacobians(&self, x: &[T], u: &[T], theta: &[T], t: usize, jx: &mut [T], ju: &mut [T]) {
        let n = x.len();
        let m = u.len();
        let h = fd_step::<T>();
        let mut base = vec![T::zero(); n];
        let mut bumped = vec![T::zero(); n];
        self.eval(x, u, theta, t, &mut base);
        let mut xp = x.to_vec();
        for j in 0..n {
            xp[j] += h;
            self.eval(&xp, u, theta, t, &mut bumped);
            xp[j] = x[j];
            for i in 0..n {
                jx[i * n + j] = (bumped[i] - base[i]) / h;
            }
        }
        let mut up = u.to_vec();
        for j in 0..m {
            up[j] += h;
            self.eval(x, &up, theta, t, &mut bumped);
            up[j] = u[j];
            for i in 0..n {
                ju[i * m + j] = (bumped[i] - base[i]) / h;
            }
        }
    }
}

/// Expected reward `h(x, u, θ, t)`.
pub trait MeanReward<T: Real>: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn eval(&self, x: &[T], u: &[T], theta: &[T], t: usize) -> T;

    /// Gradients of `h` in `x` and `u`.
    fn gradients(&self, x: &[T], u: &[T], theta: &[T], t: usize, gx: &mut [T], gu: &mut [T]) {
        let h = fd_step::<T>();
        let base = self.eval(x, u, theta, t);
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            xp[j] += h;
            gx[j] = (self.eval(&xp, u, theta, t) - base) / h;
            xp[j] = x[j];
        }
        let mut up = u.to_vec();
        for j in 0..u.len() {
            up[j] += h;
            gu[j] = (self.eval(x, &up, theta, t) - base) / h;
            up[j] = u[j];
        }
    }
}

/// User-supplied reward distribution around the mean `h`.
pub trait RewardDensity<T: Real>: Send + Sync + fmt::Debug {
    fn log_density(&self, r: T, mean: T) -> T;
    fn sample(&self, mean: T, rng: &mut dyn RngCore) -> T;
    /// Closed-form KL divergence between the distributions with the given means.
    fn kl(&self, _mean_a: T, _mean_b: T) -> Option<T> {
        None
    }
}

#[derive(Clone, Debug)]
pub enum RewardFamily<T: Real> {
    Gaussian {
        sigma: T,
    },
    /// Rewards in `{0, 1}` with success probability `h` clipped to `[0, 1]`.
    Bernoulli,
    Custom(Arc<dyn RewardDensity<T>>),
}

#[derive(Clone, Debug)]
pub struct RewardModel<T: Real> {
    pub mean: Arc<dyn MeanReward<T>>,
    pub family: RewardFamily<T>,
}

fn half_log_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

impl<T: Real> RewardModel<T> {
    pub fn gaussian(mean: Arc<dyn MeanReward<T>>, sigma: T) -> Self {
        Self {
            mean,
            family: RewardFamily::Gaussian { sigma },
        }
    }

    /// `log p(r | mean)`; `-inf` outside the support.
    pub fn log_density(&self, r: T, mean: T) -> T {
        match &self.family {
            RewardFamily::Gaussian { sigma } => {
                let s = *sigma;
                if s <= T::zero() {
                    return if r == mean { T::infinity() } else { T::neg_infinity() };
                }
                let z = (r - mean) / s;
                -(z * z) / T::lit(2.0) - s.ln() - half_log_two_pi::<T>()
            }
            RewardFamily::Bernoulli => {
                let p = mean.max(T::zero()).min(T::one());
                if r == T::one() {
                    p.ln()
                } else if r == T::zero() {
                    (T::one() - p).ln()
                } else {
                    T::neg_infinity()
                }
            }
            RewardFamily::Custom(d) => d.log_density(r, mean),
        }
    }

    pub fn sample(&self, mean: T, rng: &mut dyn RngCore) -> T {
        match &self.family {
            RewardFamily::Gaussian { sigma } => {
                if *sigma <= T::zero() {
                    mean
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + *sigma * T::lit(z)
                }
            }
            RewardFamily::Bernoulli => {
                let p = mean.max(T::zero()).min(T::one()).to_f64_lossy();
                if rng.random::<f64>() < p {
                    T::one()
                } else {
                    T::zero()
                }
            }
            RewardFamily::Custom(d) => d.sample(mean, rng),
        }
    }

    /// KL divergence between reward laws with means `a` and `b`.
    pub fn kl(&self, a: T, b: T) -> Option<T> {
        match &self.family {
            RewardFamily::Gaussian { sigma } => {
                let d = a - b;
                Some(d * d / (T::lit(2.0) * *sigma * *sigma))
            }
            RewardFamily::Bernoulli => {
                let clip = |p: T| p.max(T::lit(1e-12)).min(T::one() - T::lit(1e-12));
                let (p, q) = (clip(a), clip(b));
                Some(p * (p / q).ln() + (T::one() - p) * ((T::one() - p) / (T::one() - q)).ln())
            }
            RewardFamily::Custom(d) => d.kl(a, b),
        }
    }

    pub fn sigma(&self) -> Option<T> {
        match &self.family {
            RewardFamily::Gaussian { sigma } => Some(*sigma),
            _ => None,
        }
    }
}

/// Named time-indexed signals a scenario injects into `g` and `h`.
pub trait Exogenous<T: Real>: Send + Sync + fmt::Debug {
    fn names(&self) -> Vec<String>;
    fn values(&self, t: usize) -> Vec<T>;
}

/// Declared regularity constants; informational only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzMetadata {
    pub l_fx: Option<f64>,
    pub l_fu: Option<f64>,
    pub l_hx: Option<f64>,
    pub l_hu: Option<f64>,
    pub l_lx: Option<f64>,
    pub l_lr: Option<f64>,
    pub sigma: Option<f64>,
}

/// Features making `h` and `g` linear in functions of `θ`:
/// `h = φ_h(θ)·ψ(x, u, t)` and `g_j = φ_g(θ)·ξ_j(x, u, t)`.
///
/// Lets the estimator keep sufficient statistics instead of re-reading the
/// whole history for every candidate `θ`.
pub trait LinearParametrization<T: Real>: Send + Sync + fmt::Debug {
    fn reward_param_features(&self, theta: &[T], out: &mut Vec<T>);
    fn reward_data_features(&self, x: &[T], u: &[T], t: usize, out: &mut Vec<T>);
    fn residual_param_features(&self, theta: &[T], out: &mut Vec<T>);
    /// One feature vector per state component.
    fn residual_data_features(&self, x: &[T], u: &[T], t: usize, out: &mut Vec<Vec<T>>);
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("true parameter lies outside the parameter set")]
    ThetaOutside,
    #[error("residual {g:?} at x={x:?}, u={u:?}, t={t} is outside the disturbance set")]
    Containment {
        x: Vec<f64>,
        u: Vec<f64>,
        t: usize,
        g: Vec<f64>,
    },
    #[error("feasibility check failed: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// Everything needed to assemble a [`Scenario`].
#[derive(Clone, Debug)]
pub struct ScenarioParts<T: Real> {
    pub name: String,
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub nominal_offset: Vec<T>,
    pub residual: Arc<dyn Residual<T>>,
    pub theta_true: Vec<T>,
    pub theta_set: HPolytope<T>,
    pub w: HPolytope<T>,
    pub x: HPolytope<T>,
    pub u: HPolytope<T>,
    pub reward: RewardModel<T>,
    pub feedback_gain: Matrix<T>,
    pub feedforward: Vec<T>,
    pub x0: Vec<T>,
    pub exogenous: Option<Arc<dyn Exogenous<T>>>,
    pub linear: Option<Arc<dyn LinearParametrization<T>>>,
    pub lipschitz: Option<LipschitzMetadata>,
    /// Time indices `0..span` sampled by the containment check.
    pub validation_span: usize,
}

/// A full problem instance. Immutable once built.
#[derive(Clone, Debug)]
pub struct Scenario<T: Real> {
    parts: ScenarioParts<T>,
}

/// Result of one true plant step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<T> {
    pub state: Vec<T>,
    /// The successor left the state constraint set.
    pub violation: bool,
}

const CONTAINMENT_SAMPLES: usize = 10_000;

impl<T: Real> Scenario<T> {
    /// Checks shapes, `θ₀ ∈ Θ`, and that `g(x, u, θ₀, t) ∈ W` on sampled
    /// `(x, u, t)`.
    pub fn new(parts: ScenarioParts<T>) -> Result<Self, ScenarioError> {
        let n = parts.a.rows();
        let m = parts.b.cols();
        let shape = |what: &str| ScenarioError::Shape(what.to_string());
        if parts.a.cols() != n || parts.b.rows() != n {
            return Err(shape("A must be n×n and B n×m"));
        }
        if parts.x.dim() != n || parts.w.dim() != n || parts.u.dim() != m {
            return Err(shape("X and W must live in state space and U in input space"));
        }
        if parts.nominal_offset.len() != n || parts.x0.len() != n {
            return Err(shape("nominal offset and x0 must be state vectors"));
        }
        if parts.feedback_gain.rows() != m || parts.feedback_gain.cols() != n || parts.feedforward.len() != m {
            return Err(shape("feedback gain must be m×n with an m-vector feedforward"));
        }
        if parts.theta_set.dim() != parts.theta_true.len() {
            return Err(shape("parameter set dimension"));
        }
        if !parts.theta_set.contains(&parts.theta_true, T::cert_tol()) {
            return Err(ScenarioError::ThetaOutside);
        }
        let scn = Self { parts };
        scn.check_containment()?;
        Ok(scn)
    }

    fn check_containment(&self) -> Result<(), ScenarioError> {
        let n = self.state_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
        let span = self.parts.validation_span.max(1);
        let mut g = vec![T::zero(); n];
        let tol = T::cert_tol() * T::lit(10.0);
        for i in 0..CONTAINMENT_SAMPLES {
            let x = crate::polytope::sample_uniform(&self.parts.x, &mut rng)?;
            let u = crate::polytope::sample_uniform(&self.parts.u, &mut rng)?;
            let t = i % span;
            self.parts.residual.eval(&x, &u, &self.parts.theta_true, t, &mut g);
            if !self.parts.w.contains(&g, tol) {
                let f = |v: &[T]| v.iter().map(|e| e.to_f64_lossy()).collect();
                return Err(ScenarioError::Containment {
                    x: f(&x),
                    u: f(&u),
                    t,
                    g: f(&g),
                });
            }
        }
        Ok(())
    }

    pub fn parts(&self) -> &ScenarioParts<T> {
        &self.parts
    }

    /// Rebuilds with modified parts, re-running the construction checks.
    pub fn with_parts(&self, edit: impl FnOnce(&mut ScenarioParts<T>)) -> Result<Self, ScenarioError> {
        let mut parts = self.parts.clone();
        edit(&mut parts);
        Self::new(parts)
    }

    pub fn name(&self) -> &str {
        &self.parts.name
    }
    pub fn state_dim(&self) -> usize {
        self.parts.a.rows()
    }
    pub fn input_dim(&self) -> usize {
        self.parts.b.cols()
    }
    pub fn param_dim(&self) -> usize {
        self.parts.theta_true.len()
    }
    pub fn a(&self) -> &Matrix<T> {
        &self.parts.a
    }
    pub fn b(&self) -> &Matrix<T> {
        &self.parts.b
    }
    pub fn nominal_offset(&self) -> &[T] {
        &self.parts.nominal_offset
    }
    pub fn residual(&self) -> &dyn Residual<T> {
        self.parts.residual.as_ref()
    }
    pub fn theta_true(&self) -> &[T] {
        &self.parts.theta_true
    }
    pub fn theta_set(&self) -> &HPolytope<T> {
        &self.parts.theta_set
    }
    pub fn w(&self) -> &HPolytope<T> {
        &self.parts.w
    }
    pub fn x_set(&self) -> &HPolytope<T> {
        &self.parts.x
    }
    pub fn u_set(&self) -> &HPolytope<T> {
        &self.parts.u
    }
    pub fn reward(&self) -> &RewardModel<T> {
        &self.parts.reward
    }
    pub fn feedback_gain(&self) -> &Matrix<T> {
        &self.parts.feedback_gain
    }
    pub fn feedforward(&self) -> &[T] {
        &self.parts.feedforward
    }
    pub fn x0(&self) -> &[T] {
        &self.parts.x0
    }
    pub fn exogenous(&self) -> Option<&dyn Exogenous<T>> {
        self.parts.exogenous.as_deref()
    }
    pub fn linear_parametrization(&self) -> Option<&dyn LinearParametrization<T>> {
        self.parts.linear.as_deref()
    }
    pub fn lipschitz(&self) -> Option<&LipschitzMetadata> {
        self.parts.lipschitz.as_ref()
    }

    /// Invariant set for the scenario's feedback `u = K x + k`.
    pub fn certificate(
        &self,
    ) -> Result<crate::polytope::InvariantSetCertificate<T>, crate::polytope::InvariantSetError<T>> {
        crate::polytope::max_output_admissible_set_affine(
            &self.parts.a,
            &self.parts.b,
            &self.parts.feedback_gain,
            &self.parts.feedforward,
            &self.parts.x,
            &self.parts.u,
            &self.parts.w,
        )
    }

    /// `A x + B u + g(x, u, θ, t)` written into `out`.
    pub fn model_step_into(&self, x: &[T], u: &[T], theta: &[T], t: usize, out: &mut [T]) {
        self.parts.residual.eval(x, u, theta, t, out);
        self.parts.a.mul_vec_acc(x, out);
        self.parts.b.mul_vec_acc(u, out);
    }

    pub fn model_step(&self, x: &[T], u: &[T], theta: &[T], t: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim()];
        self.model_step_into(x, u, theta, t, &mut out);
        out
    }

    /// One step of the true plant.
    pub fn step_true(&self, x: &[T], u: &[T], t: usize) -> Step<T> {
        let state = self.model_step(x, u, &self.parts.theta_true, t);
        let violation = !self.parts.x.contains(&state, T::cert_tol());
        Step { state, violation }
    }

    /// Learned-model trajectory from `x` at time `t0`; one more state than inputs.
    pub fn rollout_learned(&self, x: &[T], inputs: &[Vec<T>], theta: &[T], t0: usize) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(x.to_vec());
        for (k, u) in inputs.iter().enumerate() {
            let next = self.model_step(&out[k], u, theta, t0 + k);
            out.push(next);
        }
        out
    }

    /// Nominal trajectory `x̄⁺ = A x̄ + B u + c`.
    pub fn rollout_nominal(&self, x: &[T], inputs: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(x.to_vec());
        for (k, u) in inputs.iter().enumerate() {
            let mut next = self.parts.nominal_offset.clone();
            self.parts.a.mul_vec_acc(&out[k], &mut next);
            self.parts.b.mul_vec_acc(u, &mut next);
            out.push(next);
        }
        out
    }

    pub fn mean_reward(&self, x: &[T], u: &[T], theta: &[T], t: usize) -> T {
        self.parts.reward.mean.eval(x, u, theta, t)
    }

    /// A reward draw with mean `h(x, u, θ₀, t)`.
    pub fn sample_reward(&self, x: &[T], u: &[T], t: usize, rng: &mut dyn RngCore) -> T {
        let mean = self.mean_reward(x, u, &self.parts.theta_true, t);
        self.parts.reward.sample(mean, rng)
    }
}

/// The information set: states `x_0..x_t`, inputs, rewards and exploration flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History<T> {
    pub states: Vec<Vec<T>>,
    pub inputs: Vec<Vec<T>>,
    pub rewards: Vec<T>,
    pub explored: Vec<bool>,
}

impl<T: Real> History<T> {
    pub fn new(x0: Vec<T>) -> Self {
        Self {
            states: vec![x0],
            inputs: Vec::new(),
            rewards: Vec::new(),
            explored: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn current_state(&self) -> &[T] {
        self.states.last().expect("history always holds x_0")
    }

    pub fn push(&mut self, u: Vec<T>, r: T, explored: bool, next: Vec<T>) {
        self.inputs.push(u);
        self.rewards.push(r);
        self.explored.push(explored);
        self.states.push(next);
    }

    /// Length bookkeeping and constraint membership of every record.
    pub fn check(&self, scn: &Scenario<T>, tol: T) -> Result<(), String> {
        let t = self.inputs.len();
        if self.states.len() != t + 1 || self.rewards.len() != t || self.explored.len() != t {
            return Err(format!(
                "inconsistent lengths: {} states, {} inputs, {} rewards, {} flags",
                self.states.len(),
                t,
                self.rewards.len(),
                self.explored.len()
            ));
        }
        for (i, x) in self.states.iter().enumerate() {
            if !scn.x_set().contains(x, tol) {
                return Err(format!("state {i} = {x:?} is outside X"));
            }
        }
        for (i, u) in self.inputs.iter().enumerate() {
            if !scn.u_set().contains(u, tol) {
                return Err(format!("input {i} = {u:?} is outside U"));
            }
        }
        Ok(())
    }
}

/// `g ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroResidual;

impl<T: Real> Residual<T> for ZeroResidual {
    fn name(&self) -> &str {
        "zero"
    }
    fn eval(&self, _x: &[T], _u: &[T], _theta: &[T], _t: usize, out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
    }
    fn jacobians(&self, _x: &[T], _u: &[T], _theta: &[T], _t: usize, jx: &mut [T], ju: &mut [T]) {
        jx.iter_mut().chain(ju.iter_mut()).for_each(|v| *v = T::zero());
    }
}

/// Scalar residual `g(x, u) = -(2 - u) x²`, independent of `θ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticDecayResidual;

impl<T: Real> Residual<T> for QuadraticDecayResidual {
    fn name(&self) -> &str {
        "example2"
    }
    fn eval(&self, x: &[T], u: &[T], _theta: &[T], _t: usize, out: &mut [T]) {
        out[0] = -(T::lit(2.0) - u[0]) * x[0] * x[0];
    }
    fn jacobians(&self, x: &[T], u: &[T], _theta: &[T], _t: usize, jx: &mut [T], ju: &mut [T]) {
        jx[0] = -T::lit(2.0) * (T::lit(2.0) - u[0]) * x[0];
        ju[0] = x[0] * x[0];
    }
}

/// `h = -(u² + (x - 1)²)` for scalar systems.
#[derive(Debug, Clone, Copy, Default)]
pub struct TargetOneReward;

impl<T: Real> MeanReward<T> for TargetOneReward {
    fn name(&self) -> &str {
        "example1"
    }
    fn eval(&self, x: &[T], u: &[T], _theta: &[T], _t: usize) -> T {
        let d = x[0] - T::one();
        -(u[0] * u[0] + d * d)
    }
    fn gradients(&self, x: &[T], u: &[T], _theta: &[T], _t: usize, gx: &mut [T], gu: &mut [T]) {
        gx[0] = -T::lit(2.0) * (x[0] - T::one());
        gu[0] = -T::lit(2.0) * u[0];
    }
}

/// `h = -((u - θ)² + (x + ½)²)` for scalar systems.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputTrackingReward;

impl<T: Real> MeanReward<T> for InputTrackingReward {
    fn name(&self) -> &str {
        "example2"
    }
    fn eval(&self, x: &[T], u: &[T], theta: &[T], _t: usize) -> T {
        let du = u[0] - theta[0];
        let dx = x[0] + T::lit(0.5);
        -(du * du + dx * dx)
    }
    fn gradients(&self, x: &[T], u: &[T], theta: &[T], _t: usize, gx: &mut [T], gu: &mut [T]) {
        gx[0] = -T::lit(2.0) * (x[0] + T::lit(0.5));
        gu[0] = -T::lit(2.0) * (u[0] - theta[0]);
    }
}

/// `h = -(θ_q ‖x‖² + θ_r ‖u‖²)` with `θ = [θ_q, θ_r]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticReward;

impl<T: Real> MeanReward<T> for QuadraticReward {
    fn name(&self) -> &str {
        "lti"
    }
    fn eval(&self, x: &[T], u: &[T], theta: &[T], _t: usize) -> T {
        let xx: T = x.iter().map(|&v| v * v).sum();
        let uu: T = u.iter().map(|&v| v * v).sum();
        -(theta[0] * xx + theta[1] * uu)
    }
    fn gradients(&self, x: &[T], u: &[T], theta: &[T], _t: usize, gx: &mut [T], gu: &mut [T]) {
        for (g, &v) in gx.iter_mut().zip(x) {
            *g = -T::lit(2.0) * theta[0] * v;
        }
        for (g, &v) in gu.iter_mut().zip(u) {
            *g = -T::lit(2.0) * theta[1] * v;
        }
    }
}

/// Features of [`QuadraticReward`] with a zero residual.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticFeatures;

impl<T: Real> LinearParametrization<T> for QuadraticFeatures {
    fn reward_param_features(&self, theta: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&theta[..2]);
    }
    fn reward_data_features(&self, x: &[T], u: &[T], _t: usize, out: &mut Vec<T>) {
        out.clear();
        out.push(-x.iter().map(|&v| v * v).sum::<T>());
        out.push(-u.iter().map(|&v| v * v).sum::<T>());
    }
    fn residual_param_features(&self, _theta: &[T], out: &mut Vec<T>) {
        out.clear();
        out.push(T::zero());
    }
    fn residual_data_features(&self, x: &[T], _u: &[T], _t: usize, out: &mut Vec<Vec<T>>) {
        out.clear();
        out.extend((0..x.len()).map(|_| vec![T::zero()]));
    }
}
