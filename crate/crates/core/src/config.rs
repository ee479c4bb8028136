//! Experiment configuration file (TOML).
//!
//! Every table and key is optional. Unknown keys are rejected, and the
//! error message names the offending key and its location.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::RunConfig;
use crate::error::{config, Result};
use crate::objectives::{make_spec, BenchmarkSpec, Family, DEFAULT_BOUND};
use crate::wsn::WsnParams;

/// Benchmark instances to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub functions: Vec<Family>,
    pub num_agents: usize,
    pub dim: usize,
    /// Width of the per-agent shift perturbation; 0 gives identical agents.
    pub hetero_sigma: f64,
    pub bound: f64,
    /// Seed of the instances (shifts, rotations). Fixed across repetitions.
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            functions: Family::ALL.to_vec(),
            num_agents: 20,
            dim: 10,
            hetero_sigma: 5.0,
            bound: DEFAULT_BOUND,
            seed: 7,
        }
    }
}

impl SuiteConfig {
    pub fn build(&self, family: Family) -> Result<BenchmarkSpec> {
        make_spec(family, self.num_agents, self.dim, self.hetero_sigma, self.bound, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub run: RunConfig,
    pub suite: SuiteConfig,
    pub wsn: WsnParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("results"),
            run: RunConfig::default(),
            suite: SuiteConfig::default(),
            wsn: WsnParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            crate::Error::Config(msg) => config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Repetitions per benchmark function, i.e. `run.num_runs`.
    pub fn repetitions(&self) -> usize {
        self.run.num_runs
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        let s = &self.suite;
        if s.functions.is_empty() {
            return Err(config("suite.functions must name at least one family"));
        }
        if s.num_agents == 0 || s.dim == 0 {
            return Err(config("suite.num_agents and suite.dim must be positive"));
        }
        if !(s.bound > 0.0) {
            return Err(config("suite.bound must be positive"));
        }
        if !(s.hetero_sigma >= 0.0 && s.hetero_sigma < s.bound) {
            return Err(config("suite.hetero_sigma must lie in [0, suite.bound)"));
        }
        self.run.graph.build(s.num_agents).map_err(|e| match e {
            crate::Error::Config(msg) => config(format!("run.graph: {msg}")),
            other => other,
        })?;
        self.wsn.validate()
    }
}
