//! Command-line front end: `simulate`, `regret`, `estimate` and `invariant-set`.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lbmpc", version, about = "Learning-based MPC simulation laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed loop and write history.csv.
    Simulate(Common),
    /// Replicated oracle-vs-learner runs; writes regret_curve.csv, regret_raw.csv, scaling.csv.
    Regret(Common),
    /// Fit θ on a recorded or freshly simulated history; writes estimates.csv and concentration.csv.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// History CSV to fit instead of simulating one.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compute and certify Ω for the scenario's feedback; writes invariant_set.json.
    InvariantSet(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicated runs; 0 uses every logical core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.plot |= self.plot;
        commands::ensure_out_dir(&cfg.out)?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(c) => commands::simulate(&c.load()?),
        Command::Regret(c) => {
            let cfg = c.load()?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(c.jobs).build()?;
            pool.install(|| commands::regret(&cfg))
        }
        Command::Estimate { common, history } => commands::estimate(&common.load()?, history.as_deref()),
        Command::InvariantSet(c) => commands::invariant_set(&c.load()?),
    }
}
