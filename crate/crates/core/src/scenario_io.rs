//! JSON scenario descriptions and the registry of named model components.
//!
//! Two forms are accepted:
//! - a raw description with matrices, box bounds, a reward family tag and
//!   residual/reward names looked up in a [`Registry`];
//! - `{"preset": name, "overrides": {...}}`, where the overrides are merged
//!   (JSON merge patch) into the preset's raw description, or into
//!   [`HvacParams`] for the `hvac` preset.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dynamics::{
    InputTrackingReward, LinearParametrization, LipschitzMetadata, MeanReward, QuadraticDecayResidual,
    QuadraticFeatures, QuadraticReward, Residual, RewardDensity, RewardFamily, RewardModel, Scenario, ScenarioError,
    ScenarioParts, TargetOneReward, ZeroResidual,
};
use crate::hvac::{build_hvac_scenario, HvacError, HvacFeatures, HvacParams, HvacResidual, HvacReward, HvacSignals};
use crate::linalg::Matrix;
use crate::polytope::HPolytope;

pub const PRESETS: [&str; 4] = ["example1", "example2", "lti", "hvac"];
pub const BUILTIN_RESIDUALS: [&str; 4] = ["zero", "example2", "hvac", "lti"];
pub const BUILTIN_REWARDS: [&str; 4] = ["example1", "example2", "lti", "hvac"];

#[derive(Debug, Error)]
pub enum ScenarioIoError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("unknown residual {0:?}")]
    UnknownResidual(String),
    #[error("unknown reward {0:?}")]
    UnknownReward(String),
    #[error("unknown reward density {0:?}")]
    UnknownDensity(String),
    #[error("invalid scenario description: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Hvac(#[from] HvacError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSpec {
    fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    fn point(p: Vec<f64>) -> Self {
        Self { lo: p.clone(), hi: p }
    }

    fn polytope(&self) -> Result<HPolytope<f64>, ScenarioIoError> {
        Ok(HPolytope::from_box(&self.lo, &self.hi).map_err(ScenarioError::from)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Gaussian {
        sigma: f64,
    },
    Bernoulli,
    /// A density registered in code under `name`.
    Custom {
        name: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub name: String,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_offset: Option<Vec<f64>>,
    pub residual: String,
    pub reward: String,
    pub family: FamilySpec,
    pub theta_true: Vec<f64>,
    pub theta_set: BoxSpec,
    pub w: BoxSpec,
    pub x: BoxSpec,
    pub u: BoxSpec,
    pub feedback_gain: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedforward: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_span: Option<usize>,
    /// Signal and tariff constants for the `hvac` residual and reward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hvac: Option<HvacParams>,
}

/// Named residuals, mean rewards and reward densities beyond the built-ins.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    residuals: BTreeMap<String, Arc<dyn Residual<f64>>>,
    rewards: BTreeMap<String, Arc<dyn MeanReward<f64>>>,
    densities: BTreeMap<String, Arc<dyn RewardDensity<f64>>>,
}

impl Registry {
    pub fn register_residual(&mut self, name: impl Into<String>, residual: Arc<dyn Residual<f64>>) {
        self.residuals.insert(name.into(), residual);
    }

    pub fn register_reward(&mut self, name: impl Into<String>, reward: Arc<dyn MeanReward<f64>>) {
        self.rewards.insert(name.into(), reward);
    }

    pub fn register_density(&mut self, name: impl Into<String>, density: Arc<dyn RewardDensity<f64>>) {
        self.densities.insert(name.into(), density);
    }

    /// `"lti"` is an alias of `"zero"`: the double integrator has no residual.
    pub fn residual(&self, name: &str, hvac: &HvacParams) -> Result<Arc<dyn Residual<f64>>, ScenarioIoError> {
        Ok(match name {
            "zero" | "lti" => Arc::new(ZeroResidual),
            "example2" => Arc::new(QuadraticDecayResidual),
            "hvac" => Arc::new(HvacResidual::new(hvac.clone())),
            other => self
                .residuals
                .get(other)
                .cloned()
                .ok_or_else(|| ScenarioIoError::UnknownResidual(other.into()))?,
        })
    }

    pub fn reward(&self, name: &str, hvac: &HvacParams) -> Result<Arc<dyn MeanReward<f64>>, ScenarioIoError> {
        Ok(match name {
            "example1" => Arc::new(TargetOneReward),
            "example2" => Arc::new(InputTrackingReward),
            "lti" => Arc::new(QuadraticReward),
            "hvac" => Arc::new(HvacReward::new(hvac.clone())),
            other => self
                .rewards
                .get(other)
                .cloned()
                .ok_or_else(|| ScenarioIoError::UnknownReward(other.into()))?,
        })
    }

    fn family(&self, spec: &FamilySpec) -> Result<RewardFamily<f64>, ScenarioIoError> {
        Ok(match spec {
            FamilySpec::Gaussian { sigma } => RewardFamily::Gaussian { sigma: *sigma },
            FamilySpec::Bernoulli => RewardFamily::Bernoulli,
            FamilySpec::Custom { name } => RewardFamily::Custom(
                self.densities
                    .get(name)
                    .cloned()
                    .ok_or_else(|| ScenarioIoError::UnknownDensity(name.clone()))?,
            ),
        })
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix<f64>, ScenarioIoError> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_rows(rows, cols).ok_or_else(|| ScenarioIoError::Shape(format!("{what} has ragged rows")))
}

impl RawScenario {
    pub fn build(&self, registry: &Registry) -> Result<Scenario<f64>, ScenarioIoError> {
        let hvac = self.hvac.clone().unwrap_or_default();
        let a = matrix(&self.a, "a")?;
        let b = matrix(&self.b, "b")?;
        let n = a.rows();
        let m = b.cols();
        let linear: Option<Arc<dyn LinearParametrization<f64>>> = match (self.residual.as_str(), self.reward.as_str()) {
            ("zero" | "lti", "lti") => Some(Arc::new(QuadraticFeatures)),
            ("hvac", "hvac") => Some(Arc::new(HvacFeatures::new(hvac.clone()))),
            _ => None,
        };
        let exogenous = (self.residual == "hvac" || self.reward == "hvac").then(|| {
            let signals: Arc<dyn crate::dynamics::Exogenous<f64>> = Arc::new(HvacSignals::new(hvac.clone()));
            signals
        });
        Ok(Scenario::new(ScenarioParts {
            name: self.name.clone(),
            a,
            b,
            nominal_offset: self.nominal_offset.clone().unwrap_or_else(|| vec![0.0; n]),
            residual: registry.residual(&self.residual, &hvac)?,
            theta_true: self.theta_true.clone(),
            theta_set: self.theta_set.polytope()?,
            w: self.w.polytope()?,
            x: self.x.polytope()?,
            u: self.u.polytope()?,
            reward: RewardModel {
                mean: registry.reward(&self.reward, &hvac)?,
                family: registry.family(&self.family)?,
            },
            feedback_gain: matrix(&self.feedback_gain, "feedback_gain")?,
            feedforward: self.feedforward.clone().unwrap_or_else(|| vec![0.0; m]),
            x0: self.x0.clone(),
            exogenous,
            linear,
            lipschitz: self.lipschitz.clone(),
            validation_span: self.validation_span.unwrap_or(1),
        })?)
    }
}

/// Raw descriptions of the small presets; identical to the builders in
/// [`crate::presets`].
pub fn preset_raw(name: &str) -> Result<RawScenario, ScenarioIoError> {
    let gaussian = FamilySpec::Gaussian { sigma: 1.0 };
    let base = |name: &str, residual: &str, reward: &str| RawScenario {
        name: name.into(),
        a: vec![vec![0.0]],
        b: vec![vec![1.0]],
        nominal_offset: None,
        residual: residual.into(),
        reward: reward.into(),
        family: gaussian.clone(),
        theta_true: vec![0.0],
        theta_set: BoxSpec::point(vec![0.0]),
        w: BoxSpec::point(vec![0.0]),
        x: BoxSpec::interval(-1.0, 1.0),
        u: BoxSpec::interval(-1.0, 1.0),
        feedback_gain: vec![vec![0.0]],
        feedforward: None,
        x0: vec![1.0],
        lipschitz: None,
        validation_span: None,
        hvac: None,
    };
    match name {
        "example1" => Ok(base("example1", "zero", "example1")),
        "example2" => Ok(RawScenario {
            b: vec![vec![0.0]],
            theta_set: BoxSpec::interval(0.0, 1.0),
            w: BoxSpec::interval(-0.5, 0.5),
            x: BoxSpec::interval(-0.5, 0.5),
            u: BoxSpec::interval(0.0, 1.0),
            x0: vec![-0.5],
            ..base("example2", "example2", "example2")
        }),
        "lti" => Ok(RawScenario {
            a: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            b: vec![vec![0.0], vec![1.0]],
            theta_true: vec![1.0, 0.1],
            theta_set: BoxSpec {
                lo: vec![0.5, 0.05],
                hi: vec![2.0, 1.0],
            },
            w: BoxSpec {
                lo: vec![-0.1, -0.1],
                hi: vec![0.1, 0.1],
            },
            x: BoxSpec {
                lo: vec![-5.0, -5.0],
                hi: vec![5.0, 5.0],
            },
            feedback_gain: vec![vec![-0.4, -1.2]],
            x0: vec![1.0, 0.0],
            ..base("lti", "lti", "lti")
        }),
        other => Err(ScenarioIoError::UnknownPreset(other.into())),
    }
}

/// A parsed scenario description, not yet built.
#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioSpec {
    Hvac(HvacParams),
    Raw(Box<RawScenario>),
}

impl ScenarioSpec {
    pub fn preset(name: &str) -> Result<Self, ScenarioIoError> {
        Self::from_value(serde_json::json!({ "preset": name }))
    }

    pub fn from_value(value: Value) -> Result<Self, ScenarioIoError> {
        let Some(preset) = value.get("preset") else {
            return Ok(Self::Raw(Box::new(serde_json::from_value(value)?)));
        };
        let name = preset
            .as_str()
            .ok_or_else(|| ScenarioIoError::Shape("preset must be a string".into()))?;
        if let Some(extra) = value
            .as_object()
            .and_then(|o| o.keys().find(|k| *k != "preset" && *k != "overrides"))
        {
            return Err(ScenarioIoError::Shape(format!(
                "unexpected key {extra:?} next to preset"
            )));
        }
        let overrides = value.get("overrides").cloned().unwrap_or(Value::Null);
        if name == "hvac" {
            let mut base = serde_json::to_value(HvacParams::default())?;
            json_patch::merge(&mut base, &overrides_or_empty(overrides));
            return Ok(Self::Hvac(serde_json::from_value(base)?));
        }
        let mut base = serde_json::to_value(preset_raw(name)?)?;
        json_patch::merge(&mut base, &overrides_or_empty(overrides));
        Ok(Self::Raw(Box::new(serde_json::from_value(base)?)))
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioIoError> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn build(&self, registry: &Registry) -> Result<Scenario<f64>, ScenarioIoError> {
        match self {
            Self::Hvac(params) => Ok(build_hvac_scenario(params)?),
            Self::Raw(raw) => raw.build(registry),
        }
    }
}

fn overrides_or_empty(v: Value) -> Value {
    if v.is_null() {
        Value::Object(Default::default())
    } else {
        v
    }
}
