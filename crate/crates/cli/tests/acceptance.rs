//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs at full size; expect roughly half an hour on a single core.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use lbmpc_cli::commands::prepare;
use lbmpc_core::dynamics::Scenario;
use lbmpc_core::estimation::{concentration_curve, log_log_slope, Estimator, LikelihoodForm, MleConfig};
use lbmpc_core::mpc::{n_step_reward, Planner, SolveStatus, SolverConfig};
use lbmpc_core::policy::{run_seeded, EstimateSource, PolicyConfig, PolicyMode};
use lbmpc_core::polytope::{
    hausdorff_distance, linear_map, minkowski_sum, pontryagin_diff, sample_uniform, HPolytope, InvariantSetCertificate,
};
use lbmpc_core::regret::{
    cost_gap, dynamic_regret, expected_cost_curve, expected_rewards, median, oracle_trajectory, replicate, run_pair,
    scaling_fit, scaling_fit_from, SLOPE_GUARD,
};
use lbmpc_core::scenario_io::ScenarioSpec;
use lbmpc_core::streams::SeedRecord;
use lbmpc_core::Matrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Scn = Scenario<f64>;
type Criterion = (&'static str, fn() -> Outcome);
type Cert = InvariantSetCertificate<f64>;

fn preset(name: &str) -> (Scn, Cert) {
    prepare(&ScenarioSpec::preset(name).unwrap()).unwrap()
}

fn hvac_learner(horizon: usize) -> PolicyConfig {
    PolicyConfig {
        horizon,
        exploration: 5.0,
        mle: MleConfig {
            form: LikelihoodForm::Joint { transition_scale: 1e-3 },
            ..MleConfig::default()
        },
        ..PolicyConfig::default()
    }
}

fn example1_exactness() -> Outcome {
    let (scn, cert) = preset("example1");
    let mut detail = Vec::new();
    let mut pass = true;
    for (horizon, expected) in [(0, -1.0), (1, -0.75)] {
        let cfg = PolicyConfig {
            horizon,
            ..PolicyConfig::default()
        };
        // T = 1 covers t = 0 and t = 1
        let hist = oracle_trajectory(&scn, &cert, &cfg, 2).unwrap();
        let total: f64 = expected_rewards(&scn, &hist).iter().sum();
        pass &= (total - expected).abs() <= 1e-9;
        detail.push(format!("N={horizon} total {total:.12}"));
    }
    outcome(pass, detail.join(", "))
}

fn invariant_sets() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, half) in [("example1", 1.0), ("example2", 0.5)] {
        let (_, cert) = preset(name);
        let expected = HPolytope::interval(-half, half).unwrap();
        let d = hausdorff_distance(&cert.omega, &expected).unwrap();
        let residual = cert.residual_containment.max(cert.residual_input);
        pass &= d <= 1e-9 && residual <= 1e-9;
        detail.push(format!("{name}: hausdorff {d:.1e}, residual {residual:.1e}"));
    }
    outcome(pass, detail.join("; "))
}

fn random_scalar_scenario(rng: &mut ChaCha8Rng) -> Option<(Scn, Cert)> {
    let a = rng.random_range(-0.9..0.9);
    let b = rng.random_range(0.5..1.5);
    let w = rng.random_range(0.01..0.15);
    let spec = ScenarioSpec::from_value(json!({
        "preset": "example1",
        "overrides": {
            "name": "random_scalar",
            "a": [[a]],
            "b": [[b]],
            "w": { "lo": [-w], "hi": [w] },
            "x": { "lo": [-1.0], "hi": [1.0] },
            "u": { "lo": [-1.0], "hi": [1.0] },
            "x0": [0.0]
        }
    }))
    .ok()?;
    prepare(&spec).ok()
}

fn safety_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    let mut scenarios: Vec<(Scn, Cert)> = ["example1", "example2", "lti", "hvac"].map(preset).into();
    for _ in 0..1000 {
        if scenarios.len() == 12 {
            break;
        }
        scenarios.extend(random_scalar_scenario(&mut rng));
    }
    assert_eq!(scenarios.len(), 12, "too few random scenarios certified");
    let horizons = [0usize, 1, 2, 3];
    let planners: Vec<Vec<Planner<f64>>> = scenarios
        .iter()
        .map(|(scn, cert)| {
            horizons
                .iter()
                .map(|&n| Planner::new(scn, cert, n, SolverConfig::default()).unwrap())
                .collect()
        })
        .collect();
    let vertices: Vec<Vec<Vec<f64>>> = scenarios.iter().map(|(s, _)| s.w().vertices().unwrap()).collect();

    let target = 100_000;
    let (mut steps, mut violations, mut infeasible, mut unsafe_inputs) = (0usize, 0usize, 0usize, 0usize);
    while steps < target {
        let k = rng.random_range(0..scenarios.len());
        let (scn, cert) = &scenarios[k];
        let planner = &planners[k][rng.random_range(0..horizons.len())];
        let theta = sample_uniform(scn.theta_set(), &mut rng).unwrap();
        let mut x = sample_uniform(&cert.omega, &mut rng).unwrap();
        let t0 = rng.random_range(0..96);
        for t in t0..t0 + 50 {
            let sol = planner.solve(&x, &theta, t).unwrap();
            if sol.status == SolveStatus::Infeasible {
                infeasible += 1;
                break;
            }
            let u = sol.inputs[0].clone();
            if planner.check_recursive_feasibility(&x, &u).is_err() {
                unsafe_inputs += 1;
            }
            let w = vertices[k].choose(&mut rng).unwrap();
            let mut next = scn.a().mul_vec(&x);
            scn.b().mul_vec_acc(&u, &mut next);
            for (xi, wi) in next.iter_mut().zip(w) {
                *xi += wi;
            }
            steps += 1;
            if !scn.x_set().contains(&next, 1e-9) || !cert.omega.contains(&next, 1e-9) {
                violations += 1;
                break;
            }
            x = next;
        }
    }
    outcome(
        violations == 0 && infeasible == 0 && unsafe_inputs == 0,
        format!(
            "{steps} steps over {} scenarios: {violations} X/Omega violations, {infeasible} infeasible, {unsafe_inputs} unsafe inputs",
            scenarios.len()
        ),
    )
}

fn example2_linear_regret() -> Outcome {
    let (scn, cert) = preset("example2");
    let cfg = PolicyConfig {
        mode: PolicyMode::PureExploit,
        estimates: EstimateSource::Scripted(vec![vec![1.0], vec![0.0]]),
        ..PolicyConfig::default()
    };
    let pair = run_pair(&scn, &cert, &cfg, 1000, SeedRecord::new(2, 0)).unwrap();
    let slope = scaling_fit(&dynamic_regret(&pair, &scn)).unwrap().log_log_slope;
    outcome(
        (slope - 1.0).abs() <= 0.05,
        format!("log-log slope {slope:.4} (T >= 100, T = 1000)"),
    )
}

fn regret_scaling() -> Outcome {
    let (scn, cert) = preset("hvac");
    let cfg = hvac_learner(1);
    let curve = replicate(&scn, &cert, &cfg, 1 << 14, 100, 2024, false).unwrap();
    let report = scaling_fit_from(&curve, 256).unwrap();
    let tail = report.tail_non_increasing(3);
    let rho: Vec<String> = report.median_rho.iter().map(|r| format!("{r:.4}")).collect();
    outcome(
        report.log_log_slope <= 0.85 && tail,
        format!(
            "slope {:.4} over T = 2^8..2^14, final mean regret {:.3}, median rho [{}]",
            report.log_log_slope,
            report.mean_regret.last().unwrap(),
            rho.join(", ")
        ),
    )
}

fn longer_horizon_wins() -> Outcome {
    let (scn, cert) = preset("hvac");
    let steps = 1 << 12;
    let short = expected_cost_curve(&scn, &cert, &hvac_learner(1), steps, 50, 77, false).unwrap();
    let long = expected_cost_curve(&scn, &cert, &hvac_learner(10), steps, 50, 77, false).unwrap();
    let gap = cost_gap(&short, &long).unwrap();
    let (m, se) = (*gap.mean.last().unwrap(), *gap.std_error.last().unwrap());
    let slope = scaling_fit(&gap).unwrap().log_log_slope;
    let oracle_cost = |horizon| -> f64 {
        let cfg = PolicyConfig {
            horizon,
            ..PolicyConfig::default()
        };
        let hist = oracle_trajectory(&scn, &cert, &cfg, steps).unwrap();
        -expected_rewards(&scn, &hist).iter().sum::<f64>()
    };
    let oracle_gap = oracle_cost(1) - oracle_cost(10);
    outcome(
        m > 2.0 * se && (0.8..=1.2).contains(&slope),
        format!(
            "final gap {m:.3} (std error {se:.3}), log-log slope {slope:.4} over T >= 100; oracle gap {oracle_gap:.3}"
        ),
    )
}

fn mle_consistency() -> Outcome {
    let (scn, cert) = preset("hvac");
    let checkpoints = [100usize, 1_000, 10_000];
    let mle = MleConfig {
        form: LikelihoodForm::Joint { transition_scale: 1e-3 },
        ..MleConfig::default()
    };
    let mut errors = vec![Vec::new(); checkpoints.len()];
    let mut kls = vec![Vec::new(); checkpoints.len()];
    for seed in 0..50u64 {
        let cfg = PolicyConfig {
            exploration: 1e12,
            seed,
            ..PolicyConfig::default()
        };
        let (hist, _) = run_seeded(&scn, &cert, &cfg, 10_000).unwrap();
        let mut est = Estimator::new(mle.clone());
        let mut fits = Vec::new();
        for (i, &t) in checkpoints.iter().enumerate() {
            let mut prefix = hist.clone();
            prefix.states.truncate(t + 1);
            prefix.inputs.truncate(t);
            prefix.rewards.truncate(t);
            prefix.explored.truncate(t);
            let theta = est.fit(&scn, &prefix).unwrap().theta_hat;
            let err = theta
                .iter()
                .zip(scn.theta_true())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            errors[i].push(err);
            fits.push((t, theta));
        }
        for (i, (_, kl)) in concentration_curve(&scn, &hist, &fits).unwrap().into_iter().enumerate() {
            kls[i].push(kl);
        }
    }
    let med_err: Vec<f64> = errors.into_iter().map(median).collect();
    let med_kl: Vec<f64> = kls.into_iter().map(median).collect();
    let ts: Vec<f64> = checkpoints.iter().map(|&t| (t - 1) as f64).collect();
    let exponent = log_log_slope(&ts, &med_kl, SLOPE_GUARD).unwrap();
    outcome(
        med_err[1] < med_err[0] && (-1.0..=-0.25).contains(&exponent),
        format!(
            "median error {:.4} -> {:.4} -> {:.4}, per-step KL exponent {exponent:.4}",
            med_err[0], med_err[1], med_err[2]
        ),
    )
}

fn nominal_feasible(planner: &Planner<f64>, x: &[f64], inputs: &[Vec<f64>]) -> bool {
    let scn = planner.scenario();
    let tol = 1e-12;
    let mut first = scn.a().mul_vec(x);
    scn.b().mul_vec_acc(&inputs[0], &mut first);
    planner.tightened_terminal().contains(&first, tol)
        && inputs.iter().all(|u| scn.u_set().contains(u, tol))
        && scn.rollout_nominal(x, &inputs[..inputs.len() - 1])[1..]
            .iter()
            .all(|s| scn.x_set().contains(s, tol))
}

/// Grid maximum of the horizon program for scalar inputs, refined by
/// successive zooms around the incumbent.
fn grid_optimum(planner: &Planner<f64>, x: &[f64], theta: &[f64], t: usize) -> f64 {
    let scn = planner.scenario();
    let len = planner.horizon() + 1;
    let (ulo, uhi) = scn.u_set().as_box().unwrap();
    let (slo, shi) = planner.safe_input_set(x).unwrap().as_box().unwrap();
    let mut bounds: Vec<(f64, f64)> = (0..len).map(|_| (ulo[0], uhi[0])).collect();
    bounds[0] = (slo[0], shi[0]);
    let full = bounds.clone();
    let coarse = match len {
        1 => 1000,
        2 => 1000,
        _ => 100,
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_at = vec![0.0; len];
    for round in 0..6 {
        let points = if round == 0 { coarse } else { 21 };
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                (0..points)
                    .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                    .collect()
            })
            .collect();
        let mut idx = vec![0usize; len];
        'grid: loop {
            let inputs: Vec<Vec<f64>> = idx.iter().enumerate().map(|(k, &i)| vec![axes[k][i]]).collect();
            if nominal_feasible(planner, x, &inputs) {
                let v = n_step_reward(scn, x, &inputs, theta, t);
                if v > best {
                    best = v;
                    best_at = inputs.iter().map(|u| u[0]).collect();
                }
            }
            for i in idx.iter_mut() {
                *i += 1;
                if *i < points {
                    continue 'grid;
                }
                *i = 0;
            }
            break;
        }
        for k in 0..len {
            let spacing = (bounds[k].1 - bounds[k].0) / (points - 1) as f64;
            bounds[k] = (
                (best_at[k] - 2.0 * spacing).max(full[k].0),
                (best_at[k] + 2.0 * spacing).min(full[k].1),
            );
        }
    }
    best
}

fn solver_vs_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (mut cases, mut worst) = (0usize, f64::INFINITY);
    for name in ["example1", "example2", "lti", "hvac"] {
        let (scn, cert) = preset(name);
        for horizon in 0..=2 {
            if scn.input_dim() * (horizon + 1) > 3 {
                continue;
            }
            let planner = Planner::new(&scn, &cert, horizon, SolverConfig::default()).unwrap();
            for _ in 0..4 {
                let x = sample_uniform(&cert.omega, &mut rng).unwrap();
                let theta = sample_uniform(scn.theta_set(), &mut rng).unwrap();
                let t = rng.random_range(0..96);
                let sol = planner.solve(&x, &theta, t).unwrap();
                let oracle = grid_optimum(&planner, &x, &theta, t);
                worst = worst.min(sol.value - oracle);
                cases += 1;
            }
        }
    }
    outcome(
        worst >= -1e-3,
        format!("{cases} cases, worst value - grid optimum {worst:.2e}"),
    )
}

fn random_box(rng: &mut ChaCha8Rng, half: std::ops::Range<f64>) -> HPolytope<f64> {
    let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..2).map(|_| rng.random_range(half.clone())).collect();
    let lo: Vec<f64> = c.iter().zip(&h).map(|(c, h)| c - h).collect();
    let hi: Vec<f64> = c.iter().zip(&h).map(|(c, h)| c + h).collect();
    HPolytope::from_box(&lo, &hi).unwrap()
}

fn set_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut checked, mut violations) = (0usize, 0usize);
    for _ in 0..100 {
        let p = random_box(&mut rng, 0.5..2.0);
        let q = random_box(&mut rng, 0.05..0.45);
        let r = Matrix::from_row_major(2, 2, (0..4).map(|_| rng.random_range(-2.0..2.0)).collect());
        let diff = pontryagin_diff(&p, &q).unwrap();
        let round_trip = minkowski_sum(&diff, &q).unwrap();
        let mapped = linear_map(&diff, &r).unwrap();
        let target = pontryagin_diff(&linear_map(&p, &r).unwrap(), &linear_map(&q, &r).unwrap()).unwrap();
        for _ in 0..50 {
            let a = sample_uniform(&round_trip, &mut rng).unwrap();
            violations += !p.contains(&a, 1e-9) as usize;
            let b = sample_uniform(&mapped, &mut rng).unwrap();
            violations += !target.contains(&b, 1e-9) as usize;
            checked += 2;
        }
    }
    outcome(
        violations == 0,
        format!("{checked} points over 100 box pairs, {violations} violations"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let policy = json!({ "horizon": 1, "mle": { "form": { "kind": "joint", "transition_scale": 0.001 } } });
    let cases = [
        (
            "simulate",
            json!({ "scenario": "hvac", "steps": 200, "seed": 3, "policy": policy }),
        ),
        (
            "regret",
            json!({ "scenario": "hvac", "steps": 256, "replicates": 4, "seed": 3, "compare_horizons": [1, 2], "policy": policy }),
        ),
        (
            "estimate",
            json!({ "scenario": "hvac", "steps": 500, "seed": 3, "policy": { "exploration": 1e9 } }),
        ),
        ("invariant-set", json!({ "scenario": "lti" })),
    ];
    let read_all = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    };
    let mut failures = Vec::new();
    let mut files = 0;
    for (sub, cfg) in cases {
        let path = dir.path().join(format!("{sub}.json"));
        fs::write(&path, cfg.to_string()).unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{sub}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_lbmpc"))
                .args([
                    sub,
                    "--config",
                    path.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--plot",
                ])
                .output()
                .unwrap()
                .status;
            if !status.success() {
                failures.push(format!("{sub} exited with {status}"));
            }
            outputs.push(read_all(&out));
        }
        files += outputs[0].len();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{sub} outputs differ"));
        }
    }
    let detail = if failures.is_empty() {
        format!("4 commands, {files} files byte-identical across two runs")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("Example 1 oracle totals", example1_exactness),
        ("invariant sets of Examples 1-2", invariant_sets),
        ("robust safety under adversarial disturbances", safety_suite),
        ("Example 2 linear regret", example2_linear_regret),
        ("regret scaling on HVAC", regret_scaling),
        ("N=10 beats N=1 on HVAC", longer_horizon_wins),
        ("MLE consistency on HVAC", mle_consistency),
        ("solver vs grid optimum", solver_vs_grid),
        ("set algebra properties", set_algebra),
        ("CLI determinism", cli_determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        failed += !out.pass as usize;
        println!(
            "criterion {id:>2} {verdict} {name}: {} [{:.1} s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
