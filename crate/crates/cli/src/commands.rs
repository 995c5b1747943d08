//! The four subcommands.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use lbmpc_core::dynamics::{History, Scenario};
use lbmpc_core::estimation::{concentration_curve, fit_inverse_sqrt, log_log_slope, Estimator};
use lbmpc_core::hvac::feasibility_check;
use lbmpc_core::polytope::InvariantSetCertificate;
use lbmpc_core::regret::{cost_gap, expected_cost_curve, replicate, scaling_fit, time_grid, Curve, SLOPE_GUARD};
use lbmpc_core::scenario_io::{Registry, ScenarioSpec};
use lbmpc_core::{policy, Polytope};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{names, num, nums, write_atomic, Table};
use crate::plot::{LinePlot, Series};

/// Builds the scenario and its certified invariant set.
pub fn prepare(spec: &ScenarioSpec) -> Result<(Scenario<f64>, InvariantSetCertificate<f64>)> {
    let scn = spec.build(&Registry::default())?;
    let cert = match spec {
        ScenarioSpec::Hvac(_) => feasibility_check(&scn)?,
        ScenarioSpec::Raw(_) => scn.certificate()?,
    };
    if !cert.is_certified() {
        bail!(
            "invariant set for {} is not certified (containment residual {}, input residual {})",
            scn.name(),
            cert.residual_containment,
            cert.residual_input
        );
    }
    Ok((scn, cert))
}

fn header_comment(command: &str, scn: &Scenario<f64>, cfg: &RunConfig, extra: &str) -> String {
    let mut s = format!(
        "lbmpc {command} scenario={} seed={} steps={} horizon={} exploration={}",
        scn.name(),
        cfg.seed,
        cfg.steps,
        cfg.policy.horizon,
        cfg.policy.exploration
    );
    if !extra.is_empty() {
        s.push(' ');
        s.push_str(extra);
    }
    s
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_plot(path: &Path, plot: &LinePlot) -> Result<()> {
    write_atomic(path, plot.render().as_bytes())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let (scn, cert) = prepare(&cfg.scenario)?;
    let (hist, diag) = policy::run_seeded(&scn, &cert, &cfg.seeded_policy(), cfg.steps)?;
    let (n, m, p) = (scn.state_dim(), scn.input_dim(), scn.param_dim());

    let mut header = vec!["t".to_string(), "s_t".to_string()];
    header.extend(names("x", n));
    header.extend(names("u", m));
    header.push("r".into());
    header.extend(names("theta_hat", p));
    header.extend(["mpc_value".to_string(), "solve_status".to_string()]);
    let mut table = Table::new(&header_comment("simulate", &scn, cfg, ""), &header)?;
    for t in 0..hist.len() {
        let mut row = vec![t.to_string(), (hist.explored[t] as u8).to_string()];
        row.extend(nums(&hist.states[t]));
        row.extend(nums(&hist.inputs[t]));
        row.push(num(hist.rewards[t]));
        match &diag.theta_used[t] {
            Some(theta) => row.extend(nums(theta)),
            None => row.extend(std::iter::repeat_n(String::new(), p)),
        }
        row.push(opt_num(diag.mpc_values[t]));
        row.push(diag.statuses[t].map(|s| s.to_string()).unwrap_or_default());
        table.row(&row)?;
    }
    let mut last = vec![hist.len().to_string(), String::new()];
    last.extend(nums(hist.current_state()));
    last.extend(std::iter::repeat_n(String::new(), m + 1 + p + 2));
    table.row(&last)?;
    table.write(&cfg.out.join("history.csv"))?;

    if cfg.plot {
        let ts: Vec<f64> = (0..=hist.len()).map(|t| t as f64).collect();
        let series = (0..n)
            .map(|i| Series {
                name: format!("x{i}"),
                xs: ts.clone(),
                ys: hist.states.iter().map(|x| x[i]).collect(),
                band: None,
            })
            .collect();
        let plot = LinePlot {
            title: format!("{} closed loop", scn.name()),
            x_label: "t".into(),
            y_label: "state".into(),
            log_x: false,
            series,
        };
        write_plot(&cfg.out.join("states.svg"), &plot)?;
    }

    let total: f64 = hist.rewards.iter().sum();
    println!(
        "simulate: {} steps, {} explorations, {} refits, total reward {total}",
        hist.len(),
        diag.explorations,
        diag.refits
    );
    Ok(())
}

fn curve_table(comment: &str, curve: &Curve) -> Result<Table> {
    let mut header: Vec<String> = ["t", "mean", "std_error"].map(String::from).to_vec();
    if curve.realized_mean.is_some() {
        header.push("realized_mean".into());
    }
    let mut table = Table::new(comment, &header)?;
    for (i, t) in curve.t_grid.iter().enumerate() {
        let mut row = vec![t.to_string(), num(curve.mean[i]), num(curve.std_error[i])];
        if let Some(r) = &curve.realized_mean {
            row.push(num(r[i]));
        }
        table.row(&row)?;
    }
    Ok(table)
}

fn raw_table(comment: &str, curve: &Curve) -> Result<Table> {
    let mut header: Vec<String> = ["replicate", "learner_seed", "reward_seed"].map(String::from).to_vec();
    header.extend(curve.t_grid.iter().map(|t| t.to_string()));
    let mut table = Table::new(comment, &header)?;
    for (row, seeds) in curve.per_replicate.iter().zip(&curve.seeds) {
        let mut fields = vec![
            seeds.replicate.to_string(),
            seeds.learner.to_string(),
            seeds.reward.to_string(),
        ];
        fields.extend(nums(row));
        table.row(&fields)?;
    }
    Ok(table)
}

fn band_plot(title: &str, y_label: &str, curve: &Curve) -> LinePlot {
    LinePlot {
        title: title.into(),
        x_label: "T".into(),
        y_label: y_label.into(),
        log_x: true,
        series: vec![Series {
            name: format!("mean of {} replicates, ±1 std error", curve.replicates()),
            xs: curve.t_grid.iter().map(|&t| t as f64).collect(),
            ys: curve.mean.clone(),
            band: Some(curve.std_error.clone()),
        }],
    }
}

pub fn regret(cfg: &RunConfig) -> Result<()> {
    let (scn, cert) = prepare(&cfg.scenario)?;
    let pcfg = cfg.seeded_policy();
    let curve = replicate(
        &scn,
        &cert,
        &pcfg,
        cfg.steps,
        cfg.replicates,
        cfg.seed,
        cfg.full_resolution,
    )?;
    let comment = header_comment("regret", &scn, cfg, &format!("replicates={}", cfg.replicates));
    curve_table(&comment, &curve)?.write(&cfg.out.join("regret_curve.csv"))?;
    raw_table(&comment, &curve)?.write(&cfg.out.join("regret_raw.csv"))?;

    match scaling_fit(&curve) {
        Ok(report) => {
            let extra = format!("replicates={} log_log_slope={}", cfg.replicates, report.log_log_slope);
            let mut table = Table::new(
                &header_comment("regret", &scn, cfg, &extra),
                &["t", "mean_regret", "rho", "median_rho"].map(String::from),
            )?;
            for i in 0..report.t.len() {
                table.row(&[
                    report.t[i].to_string(),
                    num(report.mean_regret[i]),
                    num(report.rho[i]),
                    num(report.median_rho[i]),
                ])?;
            }
            table.write(&cfg.out.join("scaling.csv"))?;
            println!("regret: log-log slope {} over T >= 100", report.log_log_slope);
        }
        Err(e) => eprintln!("regret: no scaling fit ({e})"),
    }
    if cfg.plot {
        let plot = band_plot(
            &format!("{} expected dynamic regret", scn.name()),
            "cumulative regret",
            &curve,
        );
        write_plot(&cfg.out.join("regret.svg"), &plot)?;
    }

    if let Some([first, second]) = cfg.compare_horizons {
        let cost = |horizon| {
            let c = policy::PolicyConfig {
                horizon,
                ..pcfg.clone()
            };
            expected_cost_curve(
                &scn,
                &cert,
                &c,
                cfg.steps,
                cfg.replicates,
                cfg.seed,
                cfg.full_resolution,
            )
        };
        let gap = cost_gap(&cost(first)?, &cost(second)?)?;
        let slope = scaling_fit(&gap).map_or(f64::NAN, |r| r.log_log_slope);
        let extra = format!(
            "replicates={} gap=N{first}-N{second} log_log_slope={slope}",
            cfg.replicates
        );
        curve_table(&header_comment("regret", &scn, cfg, &extra), &gap)?.write(&cfg.out.join("cost_gap.csv"))?;
        if cfg.plot {
            let plot = band_plot(
                &format!("{} cost(N={first}) - cost(N={second})", scn.name()),
                "cumulative expected cost gap",
                &gap,
            );
            write_plot(&cfg.out.join("cost_gap.svg"), &plot)?;
        }
        if let (Some(m), Some(s)) = (gap.mean.last(), gap.std_error.last()) {
            println!("regret: final cost gap {m} (std error {s}), log-log slope {slope}");
        }
    }
    if let Some(last) = curve.mean.last() {
        println!("regret: {} replicates, final mean regret {last}", curve.replicates());
    }
    Ok(())
}

/// Reads a history written by `simulate` (or any CSV with `x*`, `u*`, `r`
/// and `s_t`/`explored` columns). A row with empty inputs is the final state.
pub fn read_history(path: &Path) -> Result<History<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading history {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let indexed = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(prefix)?.parse::<usize>().ok().map(|k| (k, i)))
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let (xs, us) = (indexed("x"), indexed("u"));
    let col = |name: &str| headers.iter().position(|h| h == name);
    let r_col = col("r").ok_or_else(|| anyhow!("history has no r column"))?;
    let s_col = col("s_t").or_else(|| col("explored"));
    if xs.is_empty() || us.is_empty() {
        bail!("history needs x0.. and u0.. columns");
    }

    let parse = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("bad number {s:?}")) };
    let mut hist: Option<History<f64>> = None;
    let mut pending: Option<(Vec<f64>, f64, bool)> = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let x = xs.iter().map(|&i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        match hist.as_mut() {
            None => hist = Some(History::new(x.clone())),
            Some(h) => {
                let (u, r, s) = pending
                    .take()
                    .ok_or_else(|| anyhow!("row {} follows the final state", line + 1))?;
                h.push(u, r, s, x.clone());
            }
        }
        if rec[us[0]].trim().is_empty() {
            continue;
        }
        let u = us.iter().map(|&i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        let s = match s_col.map(|i| rec[i].trim()) {
            None | Some("") | Some("0") | Some("false") => false,
            Some("1") | Some("true") => true,
            Some(other) => bail!("bad exploration flag {other:?}"),
        };
        pending = Some((u, parse(&rec[r_col])?, s));
    }
    if pending.is_some() {
        bail!("history ends without the state following its last input");
    }
    hist.ok_or_else(|| anyhow!("history {} is empty", path.display()))
}

fn prefix(hist: &History<f64>, t: usize) -> History<f64> {
    History {
        states: hist.states[..=t].to_vec(),
        inputs: hist.inputs[..t].to_vec(),
        rewards: hist.rewards[..t].to_vec(),
        explored: hist.explored[..t].to_vec(),
    }
}

pub fn estimate(cfg: &RunConfig, history: Option<&Path>) -> Result<()> {
    let (scn, cert) = prepare(&cfg.scenario)?;
    let hist = match history {
        Some(path) => read_history(path)?,
        None => policy::run_seeded(&scn, &cert, &cfg.seeded_policy(), cfg.steps)?.0,
    };
    hist.check(&scn, 1e-9)
        .map_err(|e| anyhow!("history does not fit the scenario: {e}"))?;

    let mut checkpoints = match &cfg.checkpoints {
        Some(c) => c.clone(),
        None => time_grid(hist.len(), false),
    };
    checkpoints.retain(|&t| t >= 2 && t <= hist.len());
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.is_empty() {
        bail!("no checkpoints within the {} recorded steps", hist.len());
    }

    let mut estimator = Estimator::new(cfg.policy.mle.clone());
    let mut fits = Vec::with_capacity(checkpoints.len());
    for &t in &checkpoints {
        fits.push((t, estimator.fit(&scn, &prefix(&hist, t))?));
    }
    let p = scn.param_dim();
    let mut header = vec!["t".to_string()];
    header.extend(names("theta_hat", p));
    header.extend(["error", "nll"].map(String::from));
    let comment = header_comment("estimate", &scn, cfg, &format!("recorded_steps={}", hist.len()));
    let mut table = Table::new(&comment, &header)?;
    for (t, est) in &fits {
        let err = est
            .theta_hat
            .iter()
            .zip(scn.theta_true())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let mut row = vec![t.to_string()];
        row.extend(nums(&est.theta_hat));
        row.extend([num(err), num(est.nll)]);
        table.row(&row)?;
    }
    table.write(&cfg.out.join("estimates.csv"))?;

    let pairs: Vec<(usize, Vec<f64>)> = fits.iter().map(|(t, e)| (*t, e.theta_hat.clone())).collect();
    let curve = concentration_curve(&scn, &hist, &pairs)?;
    let fit = fit_inverse_sqrt(&curve);
    let decay = {
        let (ts, ks): (Vec<f64>, Vec<f64>) = curve.iter().map(|&(t, k)| ((t.max(2) - 1) as f64, k)).unzip();
        log_log_slope(&ts, &ks, SLOPE_GUARD)
    };
    let extra = format!(
        "recorded_steps={} fit_a={} fit_b={} decay_exponent={}",
        hist.len(),
        opt_num(fit.map(|f| f.0)),
        opt_num(fit.map(|f| f.1)),
        opt_num(decay)
    );
    let mut table = Table::new(
        &header_comment("estimate", &scn, cfg, &extra),
        &["t", "kl_per_step"].map(String::from),
    )?;
    for (t, k) in &curve {
        table.row(&[t.to_string(), num(*k)])?;
    }
    table.write(&cfg.out.join("concentration.csv"))?;

    if cfg.plot {
        let plot = LinePlot {
            title: format!("{} trajectory KL per step", scn.name()),
            x_label: "t".into(),
            y_label: "KL / (t - 1)".into(),
            log_x: true,
            series: vec![Series {
                name: "kl_per_step".into(),
                xs: curve.iter().map(|&(t, _)| t as f64).collect(),
                ys: curve.iter().map(|&(_, k)| k).collect(),
                band: None,
            }],
        };
        write_plot(&cfg.out.join("concentration.svg"), &plot)?;
    }
    if let Some((t, est)) = fits.last() {
        println!("estimate: theta_hat at t={t}: {:?}", est.theta_hat);
    }
    match (fit, decay) {
        (Some((a, b)), Some(d)) => println!("estimate: KL/(t-1) ~ {a}/sqrt(t-1) + {b}, decay exponent {d}"),
        _ => println!("estimate: too few checkpoints for a decay fit"),
    }
    Ok(())
}

#[derive(Serialize)]
struct PolytopeJson {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

impl From<&Polytope> for PolytopeJson {
    fn from(p: &Polytope) -> Self {
        let bounds = p.as_box();
        Self {
            normals: p.normals().to_rows(),
            offsets: p.offsets().to_vec(),
            lower: bounds.as_ref().map(|b| b.0.clone()),
            upper: bounds.map(|b| b.1),
        }
    }
}

#[derive(Serialize)]
struct InvariantSetJson {
    scenario: String,
    omega: PolytopeJson,
    feedback_gain: Vec<Vec<f64>>,
    feedforward: Vec<f64>,
    residual_containment: f64,
    residual_input: f64,
    iterations: usize,
    determined: bool,
    certified: bool,
}

pub fn invariant_set(cfg: &RunConfig) -> Result<()> {
    let scn = cfg.scenario.build(&Registry::default())?;
    let cert = scn.certificate()?;
    let omega = cert.omega.simplified()?;
    match omega.as_box() {
        Some((lo, hi)) => println!("omega: box lower {lo:?} upper {hi:?}"),
        None => {
            println!("omega: {} half-spaces", omega.num_constraints());
            for (row, d) in omega.normals().to_rows().iter().zip(omega.offsets()) {
                println!("  {row:?} . x <= {d}");
            }
        }
    }
    println!("residual_containment: {}", cert.residual_containment);
    println!("residual_input: {}", cert.residual_input);
    println!("iterations: {}, determined: {}", cert.iterations, cert.determined);

    let out = InvariantSetJson {
        scenario: scn.name().to_string(),
        omega: (&omega).into(),
        feedback_gain: cert.gain_k.to_rows(),
        feedforward: cert.feedforward.clone(),
        residual_containment: cert.residual_containment,
        residual_input: cert.residual_input,
        iterations: cert.iterations,
        determined: cert.determined,
        certified: cert.is_certified(),
    };
    let mut json = serde_json::to_string_pretty(&out)?;
    json.push('\n');
    write_atomic(&cfg.out.join("invariant_set.json"), json.as_bytes())?;
    if !cert.is_certified() {
        bail!("invariant set is not certified");
    }
    Ok(())
}

/// Creates the output directory up front so that permission problems surface
/// before any computation.
pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}
