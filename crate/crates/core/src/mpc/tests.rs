use std::sync::Arc;

use super::*;
use crate::dynamics::{MeanReward, RewardModel, ScenarioParts, ZeroResidual};
use crate::presets::{example1, example2, lti};

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Best value over feasible sequences of a scalar-input scenario on a grid.
fn brute_force(planner: &Planner<f64>, x: &[f64], theta: &[f64], t: usize, points: usize) -> f64 {
    let scn = planner.scenario();
    let (lo, hi) = scn.u_set().as_box().unwrap();
    let axis = grid(lo[0], hi[0], points);
    let len = planner.horizon() + 1;
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; len];
    loop {
        let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| vec![axis[i]]).collect();
        if feasible(planner, x, &inputs) {
            best = best.max(n_step_reward(scn, x, &inputs, theta, t));
        }
        let mut k = 0;
        while k < len {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == len {
            return best;
        }
    }
}

fn feasible(planner: &Planner<f64>, x: &[f64], inputs: &[Vec<f64>]) -> bool {
    let scn = planner.scenario();
    let tol = 1e-12;
    let mut first = scn.a().mul_vec(x);
    scn.b().mul_vec_acc(&inputs[0], &mut first);
    if !planner.tightened_terminal().contains(&first, tol) {
        return false;
    }
    if !inputs.iter().all(|u| scn.u_set().contains(u, tol)) {
        return false;
    }
    let nominal = scn.rollout_nominal(x, &inputs[..inputs.len() - 1]);
    nominal[1..].iter().all(|s| scn.x_set().contains(s, tol))
}

fn assert_solution_invariants(planner: &Planner<f64>, x: &[f64], theta: &[f64], t: usize, sol: &MpcSolution<f64>) {
    let scn = planner.scenario();
    assert_ne!(sol.status, SolveStatus::Infeasible);
    assert_eq!(sol.inputs.len(), planner.horizon() + 1);
    assert!(feasible_tol(planner, x, &sol.inputs, 1e-9));
    let learned = scn.rollout_learned(x, &sol.inputs, theta, t);
    assert_eq!(learned, sol.learned_states);
    assert_eq!(scn.rollout_nominal(x, &sol.inputs), sol.nominal_states);
    let recomputed = n_step_reward(scn, x, &sol.inputs, theta, t);
    assert!((recomputed - sol.value).abs() <= 1e-10);
}

fn feasible_tol(planner: &Planner<f64>, x: &[f64], inputs: &[Vec<f64>], tol: f64) -> bool {
    let scn = planner.scenario();
    let mut first = scn.a().mul_vec(x);
    scn.b().mul_vec_acc(&inputs[0], &mut first);
    planner.tightened_terminal().contains(&first, tol)
        && inputs.iter().all(|u| scn.u_set().contains(u, tol))
        && scn.rollout_nominal(x, &inputs[..inputs.len() - 1])[1..]
            .iter()
            .all(|s| scn.x_set().contains(s, tol))
}

#[test]
fn first_example_horizon_zero() {
    let scn = example1::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let planner = Planner::new(&scn, &cert, 0, SolverConfig::default()).unwrap();
    let sol = planner.solve(&[1.0], &[0.0], 0).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.inputs[0][0].abs() < 1e-8);
    assert!(sol.value.abs() < 1e-12);
    let oracle = brute_force(&planner, &[1.0], &[0.0], 0, 100_001);
    assert!(sol.value >= oracle - 1e-12);
    assert_solution_invariants(&planner, &[1.0], &[0.0], 0, &sol);
}

#[test]
fn first_example_horizon_one() {
    let scn = example1::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let planner = Planner::new(&scn, &cert, 1, SolverConfig::default()).unwrap();
    let sol = planner.solve(&[1.0], &[0.0], 0).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.inputs[0][0] - 0.5).abs() < 1e-8);
    assert!(sol.inputs[1][0].abs() < 1e-8);
    assert!((sol.value + 0.5).abs() < 1e-12);
    let oracle = brute_force(&planner, &[1.0], &[0.0], 0, 401);
    assert!(sol.value >= oracle - 1e-12);
    assert_solution_invariants(&planner, &[1.0], &[0.0], 0, &sol);
}

#[test]
fn second_example_oracle_and_optimistic_estimate() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let planner = Planner::new(&scn, &cert, 1, SolverConfig::default()).unwrap();
    let sol = planner.solve(&[-0.5], &[0.0], 0).unwrap();
    assert!(sol.inputs[0][0].abs() < 1e-8);
    // θ = 1: minimize (u0 - 1)² + (u0 / 4)², so u0 = 16/17
    let sol = planner.solve(&[-0.5], &[1.0], 0).unwrap();
    assert!((sol.inputs[0][0] - 16.0 / 17.0).abs() < 1e-7);
    assert!((sol.inputs[1][0] - 1.0).abs() < 1e-8);
    assert_solution_invariants(&planner, &[-0.5], &[1.0], 0, &sol);
}

#[test]
fn quadratic_value_matches_stacked_closed_form() {
    let scn = lti::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let theta = [1.3, 0.4];
    for horizon in 0..4 {
        let planner = Planner::new(&scn, &cert, horizon, SolverConfig::default()).unwrap();
        let x = [0.8, -0.3];
        let sol = planner.solve(&x, &theta, 0).unwrap();
        assert_solution_invariants(&planner, &x, &theta, 0, &sol);
        // Y_k = [x_k; u_k], x_k = A^k x + Σ_j A^{k-1-j} B u_j
        let mut closed = 0.0;
        for k in 0..=horizon {
            let mut p = x[0] + k as f64 * x[1];
            let mut v = x[1];
            for j in 0..k {
                p += (k - 1 - j) as f64 * sol.inputs[j][0];
                v += sol.inputs[j][0];
            }
            let u = sol.inputs[k][0];
            closed -= theta[0] * (p * p + v * v) + theta[1] * u * u;
        }
        assert!((closed - sol.value).abs() < 1e-8, "N={horizon}");
    }
}

#[test]
fn dominates_coarse_grid() {
    let e1 = example1::<f64>().unwrap();
    let e2 = example2::<f64>().unwrap();
    let cases: Vec<(&Scenario<f64>, Vec<f64>, Vec<f64>)> = vec![
        (&e1, vec![1.0], vec![0.0]),
        (&e1, vec![-0.3], vec![0.0]),
        (&e2, vec![-0.5], vec![0.0]),
        (&e2, vec![0.2], vec![0.7]),
        (&e2, vec![-0.1], vec![0.3]),
    ];
    for (scn, x, theta) in cases {
        let cert = scn.certificate().unwrap();
        for horizon in 0..3 {
            let planner = Planner::new(scn, &cert, horizon, SolverConfig::default()).unwrap();
            let sol = planner.solve(&x, &theta, 0).unwrap();
            let oracle = brute_force(&planner, &x, &theta, 0, 10);
            assert!(sol.value >= oracle - 1e-6, "{} N={horizon}", scn.name());
        }
    }
}

#[test]
fn deterministic_given_state_and_time() {
    let scn = lti::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let planner = Planner::new(&scn, &cert, 3, SolverConfig::default()).unwrap();
    let a = planner.solve(&[0.5, 0.5], &[1.0, 0.1], 7).unwrap();
    let b = planner.solve(&[0.5, 0.5], &[1.0, 0.1], 7).unwrap();
    assert_eq!(a, b);
}

#[test]
fn n_step_reward_examples() {
    let e1 = example1::<f64>().unwrap();
    assert_eq!(n_step_reward(&e1, &[1.0], &[vec![0.5], vec![0.0]], &[0.0], 0), -0.5);
    assert_eq!(
        n_step_reward(&e1, &[0.3], &[vec![0.2]], &[0.0], 0),
        e1.mean_reward(&[0.3], &[0.2], &[0.0], 0)
    );
    // inputs do not enter the state when B = 0
    let flat = e1
        .with_parts(|p| {
            p.a = Matrix::scalar(0.5);
            p.b = Matrix::scalar(0.0);
            p.residual = Arc::new(ZeroResidual);
        })
        .unwrap();
    let j1 = n_step_reward(&flat, &[0.4], &[vec![0.3], vec![0.3], vec![-0.2]], &[0.0], 0);
    let j2 = n_step_reward(&flat, &[0.4], &[vec![0.3], vec![-0.2], vec![0.3]], &[0.0], 0);
    assert!((j1 - j2).abs() < 1e-15);
}

#[derive(Debug)]
struct Scaled(Arc<dyn MeanReward<f64>>, f64);
impl MeanReward<f64> for Scaled {
    fn name(&self) -> &str {
        "scaled"
    }
    fn eval(&self, x: &[f64], u: &[f64], th: &[f64], t: usize) -> f64 {
        self.1 * self.0.eval(x, u, th, t)
    }
    fn gradients(&self, x: &[f64], u: &[f64], th: &[f64], t: usize, gx: &mut [f64], gu: &mut [f64]) {
        self.0.gradients(x, u, th, t, gx, gu);
        gx.iter_mut().chain(gu.iter_mut()).for_each(|g| *g *= self.1);
    }
}

#[test]
fn positive_scaling_preserves_argmax() {
    let scn = lti::<f64>().unwrap();
    let scaled = scn
        .with_parts(|p| {
            p.reward = RewardModel::gaussian(Arc::new(Scaled(p.reward.mean.clone(), 3.0)), 1.0);
        })
        .unwrap();
    let cert = scn.certificate().unwrap();
    let x = [1.5, -0.5];
    let a = solve_vn(&scn, &cert, &x, &[1.0, 0.1], 2, 0, &SolverConfig::default()).unwrap();
    let b = solve_vn(&scaled, &cert, &x, &[1.0, 0.1], 2, 0, &SolverConfig::default()).unwrap();
    assert!((b.value - 3.0 * a.value).abs() < 1e-8);
    for (ua, ub) in a.inputs.iter().zip(&b.inputs) {
        assert!((ua[0] - ub[0]).abs() < 1e-6);
    }
}

#[test]
fn empty_safe_set_is_infeasible() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    // Ω ⊖ W = {0}; with A = 1 and B = 0 the nominal successor of 0.3 stays at 0.3
    let shifted = scn.with_parts(|p| p.a = Matrix::scalar(1.0)).unwrap();
    let planner = Planner::new(&shifted, &cert, 1, SolverConfig::default()).unwrap();
    let sol = planner.solve(&[0.3], &[0.0], 0).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.inputs.is_empty());
    assert_eq!(sol.value, f64::NEG_INFINITY);
}

#[test]
fn recursive_feasibility_on_examples() {
    let e1 = example1::<f64>().unwrap();
    let cert = e1.certificate().unwrap();
    let planner = Planner::new(&e1, &cert, 1, SolverConfig::default()).unwrap();
    for u in grid(-1.0, 1.0, 21) {
        for x in grid(-1.0, 1.0, 11) {
            assert!(planner.check_recursive_feasibility(&[x], &[u]).is_ok());
        }
    }
    let e2 = example2::<f64>().unwrap();
    let cert = e2.certificate().unwrap();
    let planner = Planner::new(&e2, &cert, 1, SolverConfig::default()).unwrap();
    let report = planner.check_recursive_feasibility(&[-0.5], &[0.0]).unwrap();
    assert_eq!(report.vertices_checked, 2);
}

#[test]
fn inflated_certificate_yields_counterexample() {
    let l = HPolytope::<f64>::interval;
    let scn = Scenario::new(ScenarioParts {
        name: "crafted".into(),
        a: Matrix::scalar(1.0),
        b: Matrix::scalar(1.0),
        nominal_offset: vec![0.0],
        residual: Arc::new(ZeroResidual),
        theta_true: vec![0.0],
        theta_set: l(0.0, 0.0).unwrap(),
        w: l(-0.2, 0.2).unwrap(),
        x: l(-1.0, 1.0).unwrap(),
        u: l(-1.0, 1.0).unwrap(),
        reward: RewardModel::gaussian(Arc::new(crate::dynamics::TargetOneReward), 1.0),
        feedback_gain: Matrix::scalar(-0.5),
        feedforward: vec![0.0],
        x0: vec![0.0],
        exogenous: None,
        linear: None,
        lipschitz: None,
        validation_span: 1,
    })
    .unwrap();
    let cert = scn.certificate().unwrap();
    let planner = Planner::new(&scn, &cert, 1, SolverConfig::default()).unwrap();
    assert!(planner.check_recursive_feasibility(&[1.0], &[-0.3]).is_ok());

    let (lo, hi) = cert.omega.as_box().unwrap();
    let mut bad = cert.clone();
    bad.omega = HPolytope::interval(lo[0] * 1.1, hi[0] * 1.1).unwrap();
    let planner = Planner::new(&scn, &bad, 1, SolverConfig::default()).unwrap();
    // u = -0.1 keeps the nominal successor inside the inflated Ω ⊖ W
    let err = planner.check_recursive_feasibility(&[1.0], &[-0.1]).unwrap_err();
    assert_eq!(err.reason, SafetyFailure::SuccessorOutsideStateSet);
    assert!((err.disturbance[0] - 0.2).abs() < 1e-12);
}

#[test]
fn single_precision_solve() {
    let scn = example1::<f32>().unwrap();
    let cert = scn.certificate().unwrap();
    let sol = solve_vn(&scn, &cert, &[1.0f32], &[0.0], 1, 0, &SolverConfig::default()).unwrap();
    assert!((sol.inputs[0][0] - 0.5).abs() < 1e-4);
    assert!((sol.value + 0.5).abs() < 1e-5);
}
