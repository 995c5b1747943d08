//! Simulation laboratory for learning-based model predictive control.
//!
//! The numeric layers (`polytope`, `dynamics`, `mpc`, `estimation`, `policy`)
//! are generic over [`Real`]; `regret` and `hvac` work in `f64`.

pub mod dynamics;
pub mod estimation;
pub mod hvac;
pub mod linalg;
pub mod mpc;
pub mod policy;
pub mod polytope;
pub mod presets;
pub mod qp;
pub mod regret;
pub mod scalar;
pub mod scenario_io;
pub mod streams;

pub use linalg::Matrix;
pub use scalar::Real;

/// `f64` half-space polytope.
pub type Polytope = polytope::HPolytope<f64>;
/// `f32` half-space polytope.
pub type Polytope32 = polytope::HPolytope<f32>;
pub type Mat = Matrix<f64>;
pub type Scenario = dynamics::Scenario<f64>;
pub type History = dynamics::History<f64>;
