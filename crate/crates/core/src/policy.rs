//! Closed-loop controllers: the learning policy, the oracle, and the
//! non-myopic ε-greedy policy that mixes uniform safe exploration with
//! re-estimated receding-horizon control.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{History, Scenario};
use crate::estimation::{EstimationError, Estimator, MleConfig, ParameterEstimate};
use crate::mpc::{MpcError, Planner, SolveStatus, SolverConfig};
use crate::polytope::{sample_uniform, InvariantSetCertificate, PolytopeError};
use crate::scalar::Real;
use crate::streams::{stream_rng, StreamRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    EpsilonGreedy,
    Oracle,
    PureExploit,
}

/// Where exploitation steps take their parameter from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    /// Maximum-likelihood refits on the growing history.
    #[default]
    Mle,
    /// `θ̂_t` is entry `min(t, len - 1)`.
    Scripted(Vec<Vec<f64>>),
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub horizon: usize,
    /// Exploration constant `c` of `ε_t = min{1, c/t}`.
    pub exploration: f64,
    pub seed: u64,
    pub refit_stride: usize,
    pub mode: PolicyMode,
    pub estimates: EstimateSource,
    pub mle: MleConfig,
    pub solver: SolverConfig,
    /// Initial state; the scenario's `x0` when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            exploration: 5.0,
            seed: 0,
            refit_stride: 1,
            mode: PolicyMode::EpsilonGreedy,
            estimates: EstimateSource::Mle,
            mle: MleConfig::default(),
            solver: SolverConfig::default(),
            x0: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.exploration > 0.0) {
            return Err(PolicyError::Config("exploration constant must be positive".into()));
        }
        if self.refit_stride == 0 {
            return Err(PolicyError::Config("refit stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDecision<T> {
    pub input: Vec<T>,
    pub explored: bool,
    /// Parameter handed to the planner; `None` on exploration steps.
    pub theta_used: Option<Vec<T>>,
    pub oracle: bool,
    pub mpc_value: Option<T>,
    pub status: Option<SolveStatus>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("no safe input at t={t}, x={state:?}")]
    EmptySafeSet { t: usize, state: Vec<f64> },
    #[error("horizon program infeasible at t={t}, x={state:?}")]
    Infeasible { t: usize, state: Vec<f64> },
    #[error("state left X at t={t}: {state:?}")]
    StateViolation { t: usize, state: Vec<f64> },
    #[error("initial state {0:?} is outside X")]
    InitialState(Vec<f64>),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// `min{1, c/t}`, with `ε_0 = 1`.
pub fn epsilon_schedule(t: usize, c: f64) -> f64 {
    if t == 0 {
        1.0
    } else {
        (c / t as f64).min(1.0)
    }
}

fn lossy<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn lift<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// One controller instance; carries the estimator state between steps.
#[derive(Debug)]
pub struct Controller<'a, T: Real> {
    scn: &'a Scenario<T>,
    planner: Planner<'a, T>,
    config: PolicyConfig,
    estimator: Estimator<T>,
    estimate: Option<ParameterEstimate<T>>,
    fitted_at: Option<usize>,
    refits: usize,
}

impl<'a, T: Real> Controller<'a, T> {
    pub fn new(
        scn: &'a Scenario<T>,
        cert: &'a InvariantSetCertificate<T>,
        config: PolicyConfig,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        let planner = Planner::new(scn, cert, config.horizon, config.solver.clone())?;
        Ok(Self {
            scn,
            planner,
            estimator: Estimator::new(config.mle.clone()),
            config,
            estimate: None,
            fitted_at: None,
            refits: 0,
        })
    }

    pub fn planner(&self) -> &Planner<'a, T> {
        &self.planner
    }

    pub fn refits(&self) -> usize {
        self.refits
    }

    pub fn estimate(&self) -> Option<&ParameterEstimate<T>> {
        self.estimate.as_ref()
    }

    fn current_theta(&mut self, hist: &History<T>, t: usize) -> Result<Vec<T>, PolicyError> {
        match &self.config.estimates {
            EstimateSource::Fixed(th) => Ok(lift(th)),
            EstimateSource::Scripted(seq) => {
                let th = seq
                    .get(t.min(seq.len().saturating_sub(1)))
                    .ok_or_else(|| PolicyError::Config("empty estimate script".into()))?;
                Ok(lift(th))
            }
            EstimateSource::Mle => {
                if hist.rewards.len() < 2 {
                    return Ok(self.scn.theta_set().center()?);
                }
                let due = match self.fitted_at {
                    None => true,
                    Some(at) => hist.len() >= at + self.config.refit_stride,
                };
                if due {
                    let est = self.estimator.fit(self.scn, hist)?;
                    self.estimate = Some(est);
                    self.fitted_at = Some(hist.len());
                    self.refits += 1;
                }
                Ok(self.estimate.as_ref().expect("fitted above").theta_hat.clone())
            }
        }
    }

    /// The input for time `t` at the current state of `hist`.
    pub fn decide(
        &mut self,
        hist: &History<T>,
        t: usize,
        rng: &mut dyn RngCore,
    ) -> Result<StepDecision<T>, PolicyError> {
        let x = hist.current_state().to_vec();
        let explore = match self.config.mode {
            PolicyMode::EpsilonGreedy => rng.random::<f64>() < epsilon_schedule(t, self.config.exploration),
            PolicyMode::Oracle | PolicyMode::PureExploit => false,
        };
        if explore {
            let safe = match self.planner.safe_input_set(&x) {
                Ok(s) => s,
                Err(PolytopeError::Empty) => {
                    return Err(PolicyError::EmptySafeSet { t, state: lossy(&x) });
                }
                Err(e) => return Err(e.into()),
            };
            return Ok(StepDecision {
                input: sample_uniform(&safe, rng)?,
                explored: true,
                theta_used: None,
                oracle: false,
                mpc_value: None,
                status: None,
            });
        }
        let oracle = self.config.mode == PolicyMode::Oracle;
        let theta = if oracle {
            self.scn.theta_true().to_vec()
        } else {
            self.current_theta(hist, t)?
        };
        let sol = self.planner.solve(&x, &theta, t)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(PolicyError::Infeasible { t, state: lossy(&x) });
        }
        Ok(StepDecision {
            input: sol.inputs[0].clone(),
            explored: false,
            theta_used: Some(theta),
            oracle,
            mpc_value: Some(sol.value),
            status: Some(sol.status),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Diagnostics<T> {
    /// Number of exploration steps `K`.
    pub explorations: usize,
    pub refits: usize,
    pub statuses: Vec<Option<SolveStatus>>,
    pub theta_used: Vec<Option<Vec<T>>>,
    pub mpc_values: Vec<Option<T>>,
}

/// Runs `steps` closed-loop steps (states `x_0..x_steps`).
pub fn run<T: Real>(
    scn: &Scenario<T>,
    cert: &InvariantSetCertificate<T>,
    config: &PolicyConfig,
    steps: usize,
    decision_rng: &mut dyn RngCore,
    reward_rng: &mut dyn RngCore,
) -> Result<(History<T>, Diagnostics<T>), PolicyError> {
    let x0: Vec<T> = match &config.x0 {
        Some(x) => lift(x),
        None => scn.x0().to_vec(),
    };
    if !scn.x_set().contains(&x0, T::cert_tol()) {
        return Err(PolicyError::InitialState(lossy(&x0)));
    }
    let mut ctl = Controller::new(scn, cert, config.clone())?;
    let mut hist = History::new(x0);
    let mut diag = Diagnostics::default();
    for t in 0..steps {
        let d = ctl.decide(&hist, t, decision_rng)?;
        let x = hist.current_state().to_vec();
        let r = scn.sample_reward(&x, &d.input, t, reward_rng);
        let next = scn.step_true(&x, &d.input, t);
        if next.violation {
            return Err(PolicyError::StateViolation {
                t: t + 1,
                state: lossy(&next.state),
            });
        }
        diag.explorations += d.explored as usize;
        diag.statuses.push(d.status);
        diag.theta_used.push(d.theta_used);
        diag.mpc_values.push(d.mpc_value);
        hist.push(d.input, r, d.explored, next.state);
    }
    diag.refits = ctl.refits();
    Ok((hist, diag))
}

/// [`run`] with streams derived from `config.seed`.
pub fn run_seeded<T: Real>(
    scn: &Scenario<T>,
    cert: &InvariantSetCertificate<T>,
    config: &PolicyConfig,
    steps: usize,
) -> Result<(History<T>, Diagnostics<T>), PolicyError> {
    let role = if config.mode == PolicyMode::Oracle {
        StreamRole::Oracle
    } else {
        StreamRole::Learner
    };
    let mut decisions = stream_rng(config.seed, 0, role);
    let mut rewards = stream_rng(config.seed, 0, StreamRole::Reward);
    run(scn, cert, config, steps, &mut decisions, &mut rewards)
}
