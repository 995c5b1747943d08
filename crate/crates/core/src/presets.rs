//! Small built-in scenarios: the two scalar counterexamples and a double integrator.

use std::sync::Arc;

use crate::dynamics::{
    InputTrackingReward, QuadraticDecayResidual, QuadraticFeatures, QuadraticReward, RewardModel, Scenario,
    ScenarioError, ScenarioParts, TargetOneReward, ZeroResidual,
};
use crate::linalg::Matrix;
use crate::polytope::HPolytope;
use crate::scalar::Real;

fn interval<T: Real>(lo: f64, hi: f64) -> HPolytope<T> {
    HPolytope::from_box(&[T::lit(lo)], &[T::lit(hi)]).expect("ordered literal bounds")
}

fn scalar<T: Real>(v: f64) -> Matrix<T> {
    Matrix::scalar(T::lit(v))
}

/// `x⁺ = u` on `[-1, 1]` with `h = -(u² + (x - 1)²)`, `x₀ = 1`, `K = 0`.
pub fn example1<T: Real>() -> Result<Scenario<T>, ScenarioError> {
    Scenario::new(ScenarioParts {
        name: "example1".into(),
        a: scalar(0.0),
        b: scalar(1.0),
        nominal_offset: vec![T::zero()],
        residual: Arc::new(ZeroResidual),
        theta_true: vec![T::zero()],
        theta_set: HPolytope::singleton(&[T::zero()])?,
        w: HPolytope::singleton(&[T::zero()])?,
        x: interval(-1.0, 1.0),
        u: interval(-1.0, 1.0),
        reward: RewardModel::gaussian(Arc::new(TargetOneReward), T::one()),
        feedback_gain: scalar(0.0),
        feedforward: vec![T::zero()],
        x0: vec![T::one()],
        exogenous: None,
        linear: None,
        lipschitz: None,
        validation_span: 1,
    })
}

/// `x⁺ = -(2 - u) x²` on `[-½, ½]`, `u ∈ [0, 1]`, `h = -((u - θ)² + (x + ½)²)`,
/// `θ₀ = 0`, `x₀ = -½`, `K = 0`.
pub fn example2<T: Real>() -> Result<Scenario<T>, ScenarioError> {
    Scenario::new(ScenarioParts {
        name: "example2".into(),
        a: scalar(0.0),
        b: scalar(0.0),
        nominal_offset: vec![T::zero()],
        residual: Arc::new(QuadraticDecayResidual),
        theta_true: vec![T::zero()],
        theta_set: interval(0.0, 1.0),
        w: interval(-0.5, 0.5),
        x: interval(-0.5, 0.5),
        u: interval(0.0, 1.0),
        reward: RewardModel::gaussian(Arc::new(InputTrackingReward), T::one()),
        feedback_gain: scalar(0.0),
        feedforward: vec![T::zero()],
        x0: vec![T::lit(-0.5)],
        exogenous: None,
        linear: None,
        lipschitz: None,
        validation_span: 1,
    })
}

/// Double integrator with `h = -(θ_q ‖x‖² + θ_r ‖u‖²)` and no residual.
pub fn lti<T: Real>() -> Result<Scenario<T>, ScenarioError> {
    let l = T::lit;
    Scenario::new(ScenarioParts {
        name: "lti".into(),
        a: Matrix::from_row_major(2, 2, vec![l(1.0), l(1.0), l(0.0), l(1.0)]),
        b: Matrix::from_row_major(2, 1, vec![l(0.0), l(1.0)]),
        nominal_offset: vec![T::zero(); 2],
        residual: Arc::new(ZeroResidual),
        theta_true: vec![l(1.0), l(0.1)],
        theta_set: HPolytope::from_box(&[l(0.5), l(0.05)], &[l(2.0), l(1.0)])?,
        w: HPolytope::from_box(&[l(-0.1), l(-0.1)], &[l(0.1), l(0.1)])?,
        x: HPolytope::from_box(&[l(-5.0), l(-5.0)], &[l(5.0), l(5.0)])?,
        u: interval(-1.0, 1.0),
        reward: RewardModel::gaussian(Arc::new(QuadraticReward), T::one()),
        feedback_gain: Matrix::from_row_major(1, 2, vec![l(-0.4), l(-1.2)]),
        feedforward: vec![T::zero()],
        x0: vec![l(1.0), l(0.0)],
        exogenous: None,
        linear: Some(Arc::new(QuadraticFeatures)),
        lipschitz: None,
        validation_span: 1,
    })
}
