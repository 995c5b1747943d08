use super::*;
use crate::policy::EstimateSource;
use crate::presets::{example1, example2, lti};

fn synthetic(grid: Vec<usize>, f: impl Fn(f64) -> f64) -> Curve {
    let row = grid.iter().map(|&n| f(n as f64)).collect();
    Curve::from_rows(grid, vec![row], vec![SeedRecord::new(0, 0)]).unwrap()
}

#[test]
fn geometric_grid() {
    assert_eq!(time_grid(10, false), vec![1, 2, 4, 8, 10]);
    assert_eq!(time_grid(8, false), vec![1, 2, 4, 8]);
    assert!(time_grid(0, false).is_empty());
    assert_eq!(time_grid(3, true), vec![1, 2, 3]);
}

#[test]
fn pinned_learner_has_zero_regret() {
    let scn = lti::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = PolicyConfig {
        horizon: 2,
        mode: PolicyMode::PureExploit,
        estimates: EstimateSource::Fixed(scn.theta_true().to_vec()),
        ..PolicyConfig::default()
    };
    let pair = run_pair(&scn, &cert, &cfg, 40, SeedRecord::new(3, 0)).unwrap();
    assert_eq!(pair.oracle_hist.states, pair.learner_hist.states);
    assert!(regret_increments(&pair, &scn).iter().all(|&g| g == 0.0));

    let oracle = PolicyConfig {
        mode: PolicyMode::Oracle,
        ..cfg
    };
    let curve = replicate(&scn, &cert, &oracle, 40, 3, 9, false).unwrap();
    assert!(curve.mean.iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_gap() {
    let scn = example1::<f64>().unwrap();
    let u = 0.3f64.sqrt();
    let mut oracle_hist = History::new(vec![1.0]);
    oracle_hist.push(vec![0.0], 0.0, false, vec![0.0]);
    let mut learner_hist = History::new(vec![1.0]);
    learner_hist.push(vec![u], 0.0, true, vec![u]);
    let pair = TrajectoryPair {
        oracle_hist,
        learner_hist,
        seed_record: SeedRecord::new(0, 0),
    };
    let curve = dynamic_regret(&pair, &scn);
    assert_eq!(curve.t_grid, vec![1]);
    assert!((curve.mean[0] - 0.3).abs() < 1e-15);
    assert_eq!(curve.std_error, vec![0.0]);
}

#[test]
fn scripted_second_example_regret_is_linear() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = PolicyConfig {
        mode: PolicyMode::PureExploit,
        estimates: EstimateSource::Scripted(vec![vec![1.0], vec![0.0]]),
        ..PolicyConfig::default()
    };
    let pair = run_pair(&scn, &cert, &cfg, 1000, SeedRecord::new(1, 0)).unwrap();
    let curve = dynamic_regret(&pair, &scn);
    assert!(curve.mean.windows(2).all(|w| w[1] > w[0]));
    let slope = scaling_fit(&curve).unwrap().log_log_slope;
    assert!((slope - 1.0).abs() < 0.05, "{slope}");
    // the learner settles at x = 0 while the oracle holds x = -1/2
    let last = regret_increments(&pair, &scn)[999];
    assert!((last - 0.25).abs() < 1e-9);
}

#[test]
fn first_example_totals_through_harness() {
    let scn = example1::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    for (horizon, total) in [(0, -1.0), (1, -0.75)] {
        let cfg = PolicyConfig {
            horizon,
            ..PolicyConfig::default()
        };
        let hist = oracle_trajectory(&scn, &cert, &cfg, 2).unwrap();
        let sum: f64 = expected_rewards(&scn, &hist).iter().sum();
        assert!((sum - total).abs() < 1e-9);
    }
}

fn fixed_greedy(scn: &Scenario<f64>) -> PolicyConfig {
    PolicyConfig {
        estimates: EstimateSource::Fixed(vec![0.5; scn.param_dim()]),
        ..PolicyConfig::default()
    }
}

#[test]
fn replicate_bookkeeping() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = fixed_greedy(&scn);
    let one = replicate(&scn, &cert, &cfg, 30, 1, 5, false).unwrap();
    assert!(one.std_error.iter().all(|&e| e == 0.0));

    let curve = replicate(&scn, &cert, &cfg, 30, 6, 5, false).unwrap();
    for j in 0..curve.t_grid.len() {
        let mean = curve.per_replicate.iter().map(|r| r[j]).sum::<f64>() / 6.0;
        assert!((curve.mean[j] - mean).abs() <= 1e-15 * (1.0 + mean.abs()));
    }
    assert_eq!(curve.per_replicate[0], one.per_replicate[0]);
    for i in 1..6 {
        assert_ne!(curve.per_replicate[0], curve.per_replicate[i]);
    }
    assert_eq!(curve, replicate(&scn, &cert, &cfg, 30, 6, 5, false).unwrap());
    assert!(matches!(
        replicate(&scn, &cert, &cfg, 30, 0, 5, false),
        Err(RegretError::NoReplicates)
    ));
}

#[test]
fn cached_oracle_matches_fresh_pair() {
    let scn = lti::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = PolicyConfig {
        horizon: 1,
        refit_stride: 5,
        ..PolicyConfig::default()
    };
    let seeds = SeedRecord::new(11, 4);
    let cached = run_pair_cached(
        &scn,
        &cert,
        &cfg,
        &oracle_trajectory(&scn, &cert, &cfg, 25).unwrap(),
        seeds,
    )
    .unwrap();
    let mut decisions = ChaCha8Rng::seed_from_u64(seeds.oracle);
    let (fresh, _) = run(
        &scn,
        &cert,
        &oracle_config(&cfg),
        25,
        &mut decisions,
        &mut oracle_reward_rng(&seeds),
    )
    .unwrap();
    assert_eq!(cached.oracle_hist, fresh);
}

#[test]
fn regret_ignores_reward_noise_when_learner_ignores_rewards() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = fixed_greedy(&scn);
    let seeds = SeedRecord::new(2, 0);
    let other = SeedRecord { reward: 12345, ..seeds };
    let a = dynamic_regret(&run_pair(&scn, &cert, &cfg, 64, seeds).unwrap(), &scn);
    let b = dynamic_regret(&run_pair(&scn, &cert, &cfg, 64, other).unwrap(), &scn);
    assert_eq!(a.mean, b.mean);
    assert_ne!(a.realized_mean, b.realized_mean);
}

#[test]
fn standard_error_shrinks_like_inverse_root() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = fixed_greedy(&scn);
    let small = replicate(&scn, &cert, &cfg, 40, 100, 8, false).unwrap();
    let large = replicate(&scn, &cert, &cfg, 40, 400, 8, false).unwrap();
    let ratio = large.std_error.last().unwrap() / small.std_error.last().unwrap();
    assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
}

#[test]
fn cost_gaps() {
    let scn = example2::<f64>().unwrap();
    let cert = scn.certificate().unwrap();
    let cfg = fixed_greedy(&scn);
    let a = expected_cost_curve(&scn, &cert, &cfg, 50, 40, 1, false).unwrap();
    let zero = cost_gap(&a, &a).unwrap();
    assert!(zero.mean.iter().all(|&v| v == 0.0));

    let b = expected_cost_curve(&scn, &cert, &cfg, 50, 40, 2, false).unwrap();
    let null = cost_gap(&a, &b).unwrap();
    let last = null.mean.len() - 1;
    assert!(null.mean[last].abs() <= 2.0 * null.std_error[last]);

    let short = expected_cost_curve(&scn, &cert, &cfg, 40, 40, 1, false).unwrap();
    assert!(matches!(cost_gap(&a, &short), Err(RegretError::GridMismatch)));
}

#[test]
fn scaling_fit_on_synthetic_curves() {
    let grid: Vec<usize> = (7..=14).map(|k| 1usize << k).collect();
    let exact = scaling_fit(&synthetic(grid.clone(), |t| t.sqrt() * t.ln().powi(2))).unwrap();
    assert!(exact.rho.iter().all(|r| (r - 1.0).abs() < 1e-12));
    assert!(exact.median_rho.iter().all(|r| (r - 1.0).abs() < 1e-12));

    let linear = scaling_fit(&synthetic(grid.clone(), |t| t)).unwrap();
    assert!((linear.log_log_slope - 1.0).abs() < 0.01);
    assert!(linear.rho.windows(2).all(|w| w[1] > w[0]));

    let few = synthetic(vec![1, 2, 128, 256, 512], |t| t);
    assert!(matches!(
        scaling_fit(&few),
        Err(RegretError::TooFewPoints { found: 3, .. })
    ));
}

#[test]
fn negative_regret_is_reported_as_is() {
    let grid: Vec<usize> = (7..=12).map(|k| 1usize << k).collect();
    let report = scaling_fit(&synthetic(grid, |t| -t.sqrt())).unwrap();
    assert!(report.rho.iter().all(|&r| r < 0.0));
    assert!((report.log_log_slope - 0.5).abs() < 1e-6);
}
