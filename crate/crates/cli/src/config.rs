//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lbmpc_core::policy::PolicyConfig;
use lbmpc_core::scenario_io::{ScenarioSpec, PRESETS};
use serde::Deserialize;
use serde_json::Value;

/// Where the scenario comes from: a preset name, a path to a scenario JSON
/// file (relative to the config file), or an inline description.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Name(String),
    Inline(Value),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRunConfig {
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Closed-loop steps `T`.
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Master seed for every random stream.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plot: bool,
    /// Sample regret curves at every step instead of powers of two.
    #[serde(default)]
    pub full_resolution: bool,
    /// `regret`: also write the cumulative expected cost gap of the first
    /// horizon minus the second.
    #[serde(default)]
    pub compare_horizons: Option<[usize; 2]>,
    /// `estimate`: fit times; powers of two up to `steps` when absent.
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// A validated configuration with the scenario resolved.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub policy: PolicyConfig,
    pub steps: usize,
    pub replicates: usize,
    pub seed: u64,
    pub plot: bool,
    pub full_resolution: bool,
    pub compare_horizons: Option<[usize; 2]>,
    pub checkpoints: Option<Vec<usize>>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let raw: RawRunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::resolve(raw, base)
    }

    pub fn resolve(raw: RawRunConfig, base: &Path) -> Result<Self> {
        let scenario = match raw.scenario {
            ScenarioRef::Name(name) if PRESETS.contains(&name.as_str()) => ScenarioSpec::preset(&name)?,
            ScenarioRef::Name(file) => {
                let path = base.join(&file);
                let text = fs::read_to_string(&path).with_context(|| format!("reading scenario {}", path.display()))?;
                ScenarioSpec::from_json(&text).with_context(|| format!("parsing scenario {}", path.display()))?
            }
            ScenarioRef::Inline(value) => ScenarioSpec::from_value(value)?,
        };
        if raw.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        raw.policy.validate()?;
        Ok(Self {
            scenario,
            policy: raw.policy,
            steps: raw.steps,
            replicates: raw.replicates,
            seed: raw.seed,
            plot: raw.plot,
            full_resolution: raw.full_resolution,
            compare_horizons: raw.compare_horizons,
            checkpoints: raw.checkpoints,
            out: raw.out.map_or_else(|| PathBuf::from("out"), |o| base.join(o)),
        })
    }

    /// Policy settings with the master seed applied.
    pub fn seeded_policy(&self) -> PolicyConfig {
        PolicyConfig {
            seed: self.seed,
            ..self.policy.clone()
        }
    }
}
