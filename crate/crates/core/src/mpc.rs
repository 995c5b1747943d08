//! The finite-horizon program `V_N(x, θ, t)`.
//!
//! Inputs `u_0..u_N` are stacked into one vector. Every constraint (input set,
//! first-step safety `A x + B u_0 ∈ Ω ⊖ W`, nominal state constraints
//! `x̄_k ∈ X` for `k = 1..N`) is affine in that vector, so the feasible region
//! is a polytope `F U <= f0 - G x`. The objective sums `h` along the learned
//! rollout and is maximized by spectral projected gradient ascent with a
//! nonmonotone line search, from several feasible starts.

use std::collections::VecDeque;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Scenario;
use crate::linalg::Matrix;
use crate::polytope::{
    pontryagin_diff, safe_input_set_tightened, sample_uniform, HPolytope, InvariantSetCertificate, PolytopeError,
};
use crate::qp::Projector;
use crate::scalar::{dot, norm_inf, Real};
use crate::streams::mix64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Projected-gradient stationarity threshold.
    pub tolerance: f64,
    /// Iteration cap per start.
    pub max_iterations: usize,
    pub multistarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
            multistarts: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleSuboptimal,
    Infeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleSuboptimal => "feasible_suboptimal",
            SolveStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution<T> {
    /// `u_{t|t} .. u_{t+N|t}`; empty when infeasible.
    pub inputs: Vec<Vec<T>>,
    pub learned_states: Vec<Vec<T>>,
    pub nominal_states: Vec<Vec<T>>,
    /// Planned reward `Σ_k h(x̃_k, u_k, θ, t + k)`; `-inf` when infeasible.
    pub value: T,
    pub status: SolveStatus,
    pub solver_iterations: usize,
}

impl<T: Real> MpcSolution<T> {
    pub fn first_input(&self) -> Option<&[T]> {
        self.inputs.first().map(|u| u.as_slice())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("state has dimension {found}, expected {expected}")]
    StateDimension { expected: usize, found: usize },
    #[error("certificate does not match the scenario dimensions")]
    Certificate,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// A safety failure found by [`Planner::check_recursive_feasibility`].
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyCounterexample<T> {
    pub disturbance: Vec<T>,
    pub successor: Vec<T>,
    pub reason: SafetyFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafetyFailure {
    /// The applied input violates the first-step constraint at `x`.
    InputNotAdmissible,
    SuccessorOutsideOmega,
    SuccessorOutsideStateSet,
    /// The feedback continuation from the successor breaks a constraint.
    CandidateInfeasible,
}

/// Worst margins over the disturbance vertices; all nonnegative on success.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport<T> {
    pub vertices_checked: usize,
    pub omega_margin: T,
    pub candidate_margin: T,
}

/// Precomputed constraint structure of `V_N` for one scenario and horizon.
#[derive(Clone, Debug)]
pub struct Planner<'a, T: Real> {
    scn: &'a Scenario<T>,
    cert: &'a InvariantSetCertificate<T>,
    horizon: usize,
    config: SolverConfig,
    tightened: HPolytope<T>,
    /// `F` restricted to rows with a nonzero coefficient.
    rows: Matrix<T>,
    rhs_const: Vec<T>,
    /// `G`: the right-hand side is `rhs_const - G x`.
    rhs_state: Matrix<T>,
    /// Rows that do not involve the inputs; they must hold on their own.
    fixed_const: Vec<T>,
    fixed_state: Matrix<T>,
}

struct Workspace<T> {
    states: Vec<Vec<T>>,
    lambda: Vec<T>,
    next_lambda: Vec<T>,
    jx: Vec<T>,
    ju: Vec<T>,
    gx: Vec<T>,
    gu: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            states: vec![vec![T::zero(); n]; horizon + 1],
            lambda: vec![T::zero(); n],
            next_lambda: vec![T::zero(); n],
            jx: vec![T::zero(); n * n],
            ju: vec![T::zero(); n * m],
            gx: vec![T::zero(); n],
            gu: vec![T::zero(); m],
        }
    }
}

struct Run<T> {
    inputs: Vec<T>,
    value: T,
    converged: bool,
    iterations: usize,
}

const NONMONOTONE_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-10;
const STEP_MAX: f64 = 1e10;

impl<'a, T: Real> Planner<'a, T> {
    pub fn new(
        scn: &'a Scenario<T>,
        cert: &'a InvariantSetCertificate<T>,
        horizon: usize,
        config: SolverConfig,
    ) -> Result<Self, MpcError> {
        let n = scn.state_dim();
        let m = scn.input_dim();
        if cert.omega.dim() != n || cert.gain_k.rows() != m || cert.gain_k.cols() != n {
            return Err(MpcError::Certificate);
        }
        let tightened = pontryagin_diff(&cert.omega, scn.w())?;
        let a = scn.a();
        let b = scn.b();
        let dim = m * (horizon + 1);

        let mut powers = vec![Matrix::identity(n)];
        for k in 1..=horizon {
            powers.push(powers[k - 1].matmul(a));
        }
        // drift_k = Σ_{j<k} A^{k-1-j} c
        let mut drift = vec![vec![T::zero(); n]];
        for k in 1..=horizon {
            let mut d = a.mul_vec(&drift[k - 1]);
            for (dv, &c) in d.iter_mut().zip(scn.nominal_offset()) {
                *dv += c;
            }
            drift.push(d);
        }

        let mut rows: Vec<Vec<T>> = Vec::new();
        let mut rhs_const = Vec::new();
        let mut rhs_state: Vec<Vec<T>> = Vec::new();
        let mut fixed_const = Vec::new();
        let mut fixed_state: Vec<Vec<T>> = Vec::new();
        let mut push = |coef: Vec<T>, b0: T, gx: Vec<T>| {
            if coef.iter().all(|&v| v == T::zero()) {
                fixed_const.push(b0);
                fixed_state.push(gx);
            } else {
                rows.push(coef);
                rhs_const.push(b0);
                rhs_state.push(gx);
            }
        };

        let u_set = scn.u_set();
        for k in 0..=horizon {
            for i in 0..u_set.num_constraints() {
                let mut coef = vec![T::zero(); dim];
                coef[k * m..(k + 1) * m].copy_from_slice(u_set.normals().row(i));
                push(coef, u_set.offsets()[i], vec![T::zero(); n]);
            }
        }
        for i in 0..tightened.num_constraints() {
            let c = tightened.normals().row(i);
            let mut coef = vec![T::zero(); dim];
            coef[..m].copy_from_slice(&b.tr_mul_vec(c));
            push(coef, tightened.offsets()[i], a.tr_mul_vec(c));
        }
        let x_set = scn.x_set();
        for k in 1..=horizon {
            for i in 0..x_set.num_constraints() {
                let c = x_set.normals().row(i);
                let mut coef = vec![T::zero(); dim];
                for j in 0..k {
                    let block = powers[k - 1 - j].matmul(b).tr_mul_vec(c);
                    coef[j * m..(j + 1) * m].copy_from_slice(&block);
                }
                push(coef, x_set.offsets()[i] - dot(c, &drift[k]), powers[k].tr_mul_vec(c));
            }
        }
        let to_matrix = |r: &[Vec<T>], cols: usize| {
            if r.is_empty() {
                Matrix::zeros(0, cols)
            } else {
                Matrix::from_rows(r, cols).expect("uniform row length")
            }
        };
        Ok(Self {
            scn,
            cert,
            horizon,
            config,
            tightened,
            rows: to_matrix(&rows, dim),
            rhs_const,
            rhs_state: to_matrix(&rhs_state, n),
            fixed_const,
            fixed_state: to_matrix(&fixed_state, n),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn scenario(&self) -> &Scenario<T> {
        self.scn
    }

    pub fn certificate(&self) -> &InvariantSetCertificate<T> {
        self.cert
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// `Ω ⊖ W`.
    pub fn tightened_terminal(&self) -> &HPolytope<T> {
        &self.tightened
    }

    /// `Ū(x) = {u ∈ U : A x + B u ∈ Ω ⊖ W}`.
    pub fn safe_input_set(&self, x: &[T]) -> Result<HPolytope<T>, PolytopeError> {
        let zero = vec![T::zero(); self.scn.state_dim()];
        safe_input_set_tightened(x, self.scn.a(), self.scn.b(), &zero, &self.tightened, self.scn.u_set())
    }

    fn projector_at(&self, x: &[T]) -> Option<Projector<T>> {
        for (i, &b0) in self.fixed_const.iter().enumerate() {
            let bound = b0 - dot(self.fixed_state.row(i), x);
            if bound < -T::cert_tol() * (T::one() + b0.abs()) {
                return None;
            }
        }
        let mut rhs = self.rhs_const.clone();
        for (i, r) in rhs.iter_mut().enumerate() {
            *r -= dot(self.rhs_state.row(i), x);
        }
        Some(Projector::new(self.rows.clone(), rhs))
    }

    /// Feedback continuation `u_k = K x̄_k + k` after the given first input.
    fn continuation(&self, x: &[T], first: &[T]) -> Vec<T> {
        let m = self.scn.input_dim();
        let mut out = Vec::with_capacity(m * (self.horizon + 1));
        out.extend_from_slice(first);
        let mut xbar = x.to_vec();
        let mut u = first.to_vec();
        for _ in 0..self.horizon {
            let mut next = self.scn.nominal_offset().to_vec();
            self.scn.a().mul_vec_acc(&xbar, &mut next);
            self.scn.b().mul_vec_acc(&u, &mut next);
            xbar = next;
            u = self.cert.feedback(&xbar);
            out.extend_from_slice(&u);
        }
        out
    }

    fn unstack(&self, z: &[T]) -> Vec<Vec<T>> {
        z.chunks(self.scn.input_dim()).map(|c| c.to_vec()).collect()
    }

    fn infeasible(&self) -> MpcSolution<T> {
        MpcSolution {
            inputs: Vec::new(),
            learned_states: Vec::new(),
            nominal_states: Vec::new(),
            value: T::neg_infinity(),
            status: SolveStatus::Infeasible,
            solver_iterations: 0,
        }
    }

    /// Maximizes the planned reward from state `x` at time `t` under `θ`.
    pub fn solve(&self, x: &[T], theta: &[T], t: usize) -> Result<MpcSolution<T>, MpcError> {
        let n = self.scn.state_dim();
        if x.len() != n {
            return Err(MpcError::StateDimension {
                expected: n,
                found: x.len(),
            });
        }
        let Some(proj) = self.projector_at(x) else {
            return Ok(self.infeasible());
        };
        let first_set = match self.safe_input_set(x) {
            Ok(s) => s,
            Err(PolytopeError::Empty) => return Ok(self.infeasible()),
            Err(e) => return Err(e.into()),
        };

        let m = self.scn.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(start_seed(x, t));
        let starts = self.config.multistarts.max(1);
        let mut ws = Workspace::new(n, m, self.horizon);
        let mut best: Option<Run<T>> = None;
        let mut total_iterations = 0;
        for s in 0..starts {
            let start = if s == 0 {
                self.continuation(x, &first_set.center()?)
            } else {
                let u0 = sample_uniform(&first_set, &mut rng)?;
                let feasible = self.continuation(x, &u0);
                let mut target = u0;
                for _ in 0..self.horizon {
                    target.extend(sample_uniform(self.scn.u_set(), &mut rng)?);
                }
                proj.project(&target, &feasible).unwrap_or(feasible)
            };
            let run = self.ascend(&proj, x, theta, t, start, &mut ws);
            total_iterations += run.iterations;
            best = Some(match best {
                None => run,
                Some(b) => pick(b, run),
            });
        }
        let best = best.expect("at least one start");
        let inputs = self.unstack(&best.inputs);
        let learned_states = self.scn.rollout_learned(x, &inputs, theta, t);
        let nominal_states = self.scn.rollout_nominal(x, &inputs);
        Ok(MpcSolution {
            value: n_step_reward_on(self.scn, &learned_states, &inputs, theta, t),
            inputs,
            learned_states,
            nominal_states,
            status: if best.converged {
                SolveStatus::Optimal
            } else {
                SolveStatus::FeasibleSuboptimal
            },
            solver_iterations: total_iterations,
        })
    }

    /// Objective and its gradient in the stacked inputs.
    fn value_and_gradient(&self, x: &[T], z: &[T], theta: &[T], t: usize, grad: &mut [T], ws: &mut Workspace<T>) -> T {
        let n = self.scn.state_dim();
        let m = self.scn.input_dim();
        let horizon = self.horizon;
        ws.states[0].copy_from_slice(x);
        for k in 0..horizon {
            let (done, rest) = ws.states.split_at_mut(k + 1);
            self.scn
                .model_step_into(&done[k], &z[k * m..(k + 1) * m], theta, t + k, &mut rest[0]);
        }
        let reward = &self.scn.reward().mean;
        let mut value = T::zero();
        for k in 0..=horizon {
            value += reward.eval(&ws.states[k], &z[k * m..(k + 1) * m], theta, t + k);
        }
        let a = self.scn.a();
        let b = self.scn.b();
        for k in (0..=horizon).rev() {
            let u = &z[k * m..(k + 1) * m];
            reward.gradients(&ws.states[k], u, theta, t + k, &mut ws.gx, &mut ws.gu);
            if k == horizon {
                ws.lambda.copy_from_slice(&ws.gx);
                grad[k * m..(k + 1) * m].copy_from_slice(&ws.gu);
                continue;
            }
            // ws.lambda holds λ_{k+1}
            self.scn
                .residual()
                .jacobians(&ws.states[k], u, theta, t + k, &mut ws.jx, &mut ws.ju);
            for j in 0..m {
                let mut g = ws.gu[j];
                for i in 0..n {
                    g += (b[(i, j)] + ws.ju[i * m + j]) * ws.lambda[i];
                }
                grad[k * m + j] = g;
            }
            for j in 0..n {
                let mut l = ws.gx[j];
                for i in 0..n {
                    l += (a[(i, j)] + ws.jx[i * n + j]) * ws.lambda[i];
                }
                ws.next_lambda[j] = l;
            }
            std::mem::swap(&mut ws.lambda, &mut ws.next_lambda);
        }
        value
    }

    fn ascend(
        &self,
        proj: &Projector<T>,
        x: &[T],
        theta: &[T],
        t: usize,
        start: Vec<T>,
        ws: &mut Workspace<T>,
    ) -> Run<T> {
        let d = start.len();
        let mut z = start;
        let mut grad = vec![T::zero(); d];
        let mut value = self.value_and_gradient(x, &z, theta, t, &mut grad, ws);
        let mut history: VecDeque<T> = VecDeque::with_capacity(NONMONOTONE_MEMORY);
        history.push_back(value);
        let mut step = T::one();
        let mut trial = vec![T::zero(); d];
        let mut trial_grad = vec![T::zero(); d];
        let tol_base = T::lit(self.config.tolerance);

        for it in 0..self.config.max_iterations {
            // stationarity: ‖P(z + ∇J) - z‖∞
            for k in 0..d {
                trial[k] = z[k] + grad[k];
            }
            let Ok(p) = proj.project(&trial, &z) else {
                return Run {
                    inputs: z,
                    value,
                    converged: false,
                    iterations: it,
                };
            };
            let residual = p.iter().zip(&z).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
            let gnorm = norm_inf(&grad);
            let tol = tol_base.max(T::epsilon() * T::lit(1e2) * (T::one() + gnorm));
            if residual <= tol {
                return Run {
                    inputs: z,
                    value,
                    converged: true,
                    iterations: it,
                };
            }

            let dir: Vec<T> = if step == T::one() {
                p.iter().zip(&z).map(|(&a, &b)| a - b).collect()
            } else {
                for k in 0..d {
                    trial[k] = z[k] + step * grad[k];
                }
                match proj.project(&trial, &z) {
                    Ok(q) => q.iter().zip(&z).map(|(&a, &b)| a - b).collect(),
                    Err(_) => {
                        return Run {
                            inputs: z,
                            value,
                            converged: false,
                            iterations: it,
                        }
                    }
                }
            };
            let slope = dot(&grad, &dir);
            let reference = history.iter().copied().fold(T::infinity(), T::min);
            let mut alpha = T::one();
            let accepted = loop {
                for k in 0..d {
                    trial[k] = z[k] + alpha * dir[k];
                }
                let v = self.value_and_gradient(x, &trial, theta, t, &mut trial_grad, ws);
                if v >= reference + T::lit(ARMIJO) * alpha * slope {
                    break Some(v);
                }
                alpha /= T::lit(2.0);
                if alpha < T::lit(1e-12) {
                    break None;
                }
            };
            let Some(new_value) = accepted else {
                return Run {
                    inputs: z,
                    value,
                    converged: false,
                    iterations: it + 1,
                };
            };
            // Barzilai-Borwein step for the minimization of -J
            let mut ss = T::zero();
            let mut sy = T::zero();
            for k in 0..d {
                let s = trial[k] - z[k];
                let y = grad[k] - trial_grad[k];
                ss += s * s;
                sy += s * y;
            }
            step = if sy > T::zero() {
                (ss / sy).max(T::lit(STEP_MIN)).min(T::lit(STEP_MAX))
            } else {
                T::lit(STEP_MAX)
            };
            std::mem::swap(&mut z, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            value = new_value;
            if history.len() == NONMONOTONE_MEMORY {
                history.pop_front();
            }
            history.push_back(value);
        }
        Run {
            inputs: z,
            value,
            converged: false,
            iterations: self.config.max_iterations,
        }
    }

    /// Checks robust safety of applying `u` at `x` against every
    /// vertex of `W`: the successor lies in `Ω` and the feedback continuation
    /// from it is feasible for the horizon program.
    pub fn check_recursive_feasibility(
        &self,
        x: &[T],
        u: &[T],
    ) -> Result<FeasibilityReport<T>, SafetyCounterexample<T>> {
        let tol = T::cert_tol() * T::lit(10.0);
        let mut nominal = self.scn.a().mul_vec(x);
        self.scn.b().mul_vec_acc(u, &mut nominal);
        let admissible = self.tightened.contains(&nominal, tol) && self.scn.u_set().contains(u, tol);
        if !admissible {
            return Err(SafetyCounterexample {
                disturbance: vec![T::zero(); x.len()],
                successor: nominal,
                reason: SafetyFailure::InputNotAdmissible,
            });
        }
        let vertices = self.scn.w().vertices().unwrap_or_default();
        let mut omega_margin = T::infinity();
        let mut candidate_margin = T::infinity();
        for w in &vertices {
            let successor: Vec<T> = nominal.iter().zip(w).map(|(&a, &b)| a + b).collect();
            if !self.scn.x_set().contains(&successor, tol) {
                return Err(SafetyCounterexample {
                    disturbance: w.clone(),
                    successor,
                    reason: SafetyFailure::SuccessorOutsideStateSet,
                });
            }
            let om = -self.cert.omega.violation(&successor);
            omega_margin = omega_margin.min(om);
            if om < -tol {
                return Err(SafetyCounterexample {
                    disturbance: w.clone(),
                    successor,
                    reason: SafetyFailure::SuccessorOutsideOmega,
                });
            }
            let cand = self.continuation(&successor, &self.cert.feedback(&successor));
            let margin = match self.projector_at(&successor) {
                Some(p) => -p.max_violation(&cand),
                None => T::neg_infinity(),
            };
            candidate_margin = candidate_margin.min(margin);
            if margin < -tol {
                return Err(SafetyCounterexample {
                    disturbance: w.clone(),
                    successor,
                    reason: SafetyFailure::CandidateInfeasible,
                });
            }
        }
        Ok(FeasibilityReport {
            vertices_checked: vertices.len(),
            omega_margin,
            candidate_margin,
        })
    }
}

fn start_seed<T: Real>(x: &[T], t: usize) -> u64 {
    x.iter()
        .fold(mix64(t as u64), |acc, v| mix64(acc ^ v.to_f64_lossy().to_bits()))
}

/// Keeps the higher value; near-ties go to the lexicographically smaller sequence.
fn pick<T: Real>(a: Run<T>, b: Run<T>) -> Run<T> {
    let scale = T::one() + a.value.abs().max(b.value.abs());
    if (a.value - b.value).abs() <= T::lit(1e-12) * scale {
        let a_first = a
            .inputs
            .iter()
            .zip(&b.inputs)
            .find(|(p, q)| p != q)
            .is_none_or(|(p, q)| p < q);
        let (mut keep, other) = if a_first { (a, b) } else { (b, a) };
        keep.converged |= other.converged;
        keep
    } else if a.value > b.value {
        a
    } else {
        b
    }
}

fn n_step_reward_on<T: Real>(scn: &Scenario<T>, states: &[Vec<T>], inputs: &[Vec<T>], theta: &[T], t: usize) -> T {
    inputs
        .iter()
        .enumerate()
        .map(|(k, u)| scn.mean_reward(&states[k], u, theta, t + k))
        .fold(T::zero(), |acc, v| acc + v)
}

/// `J_N`: planned reward of an input sequence along the learned rollout.
pub fn n_step_reward<T: Real>(scn: &Scenario<T>, x: &[T], inputs: &[Vec<T>], theta: &[T], t: usize) -> T {
    let states = scn.rollout_learned(x, &inputs[..inputs.len().saturating_sub(1)], theta, t);
    n_step_reward_on(scn, &states, inputs, theta, t)
}

/// One-shot convenience wrapper around [`Planner`].
pub fn solve_vn<T: Real>(
    scn: &Scenario<T>,
    cert: &InvariantSetCertificate<T>,
    x: &[T],
    theta: &[T],
    horizon: usize,
    t: usize,
    config: &SolverConfig,
) -> Result<MpcSolution<T>, MpcError> {
    Planner::new(scn, cert, horizon, config.clone())?.solve(x, theta, t)
}

/// Safety check for a single applied input; see [`Planner::check_recursive_feasibility`].
pub fn check_recursive_feasibility<T: Real>(
    scn: &Scenario<T>,
    cert: &InvariantSetCertificate<T>,
    horizon: usize,
    x: &[T],
    u: &[T],
) -> Result<Result<FeasibilityReport<T>, SafetyCounterexample<T>>, MpcError> {
    Ok(Planner::new(scn, cert, horizon, SolverConfig::default())?.check_recursive_feasibility(x, u))
}

#[cfg(test)]
mod tests;
