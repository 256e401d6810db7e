//! Experiment configuration files (TOML).
//!
//! ```toml
//! mode = "ga"            # "ga", "ga-ns" or "rs"
//!
//! [noise]
//! seed = 7
//! size = 33554432
//!
//! [env]
//! kind = "maze"          # optional: map = "path/to/file.maze"
//!
//! [policy]
//! input = [84, 84, 4]
//! output_activation = "tanh"
//! [[policy.layers]]
//! kind = "conv"
//! out_channels = 8
//! kernel = 8
//! stride = 4
//! # ...
//!
//! [ga]
//! population = 201
//! truncation = 20
//! sigma = 0.005
//! generations = 100
//! seed = 1
//!
//! [novelty]
//! k = 25
//! p = 0.01
//!
//! [output]
//! dir = "runs/maze-ga"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::eval::EvalContext;
use crate::evolution::{GaConfig, Mode};
use crate::noise::{NoiseTable, Seed, DEFAULT_TABLE_SIZE};
use crate::novelty::NoveltyConfig;
use crate::policy::PolicySpec;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: Seed,
    #[serde(default = "default_table_size")]
    pub size: usize,
}

fn default_table_size() -> usize {
    DEFAULT_TABLE_SIZE
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            seed: Seed::new(7).expect("in range"),
            size: DEFAULT_TABLE_SIZE,
        }
    }
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseTable, Error> {
        Ok(NoiseTable::build(self.seed, self.size)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Keep one numbered checkpoint per generation besides the latest.
    #[serde(default)]
    pub checkpoint_history: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            checkpoint_history: false,
        }
    }
}

fn default_policy() -> PolicySpec {
    PolicySpec::desk_maze()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    pub ga: GaConfig,
    #[serde(default)]
    pub novelty: NoveltyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Reads and validates a config file. A relative map path is taken
    /// relative to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let EnvConfig::Maze { map: Some(map), .. } = &mut cfg.env {
            if map.is_relative() {
                if let Some(dir) = path.parent() {
                    *map = dir.join(&*map);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without touching the file system.
    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without building the noise table.
    pub fn validate(&self) -> Result<(), Error> {
        self.ga.validate()?;
        if self.mode == Mode::GaNs {
            self.novelty.validate().map_err(Error::Config)?;
        }
        let net = self.policy.compile()?;
        let env = self.env.resolve()?;
        env.check_policy(&net)?;
        if self.noise.size < net.param_count() {
            return Err(Error::Config(format!(
                "noise table of {} entries is smaller than the policy's {} parameters",
                self.noise.size,
                net.param_count()
            )));
        }
        Ok(())
    }

    /// Builds the noise table, network and environment.
    pub fn context(&self) -> Result<EvalContext, Error> {
        let net = Arc::new(self.policy.compile()?);
        let env = self.env.resolve()?;
        let table = Arc::new(self.noise.build()?);
        EvalContext::new(table, net, env)
    }

    /// Same as [`Self::context`] but reuses an already built table.
    pub fn context_with(&self, table: Arc<NoiseTable>) -> Result<EvalContext, Error> {
        if table.master_seed() != self.noise.seed || table.len() != self.noise.size {
            return Err(Error::Config("noise table does not match the config".into()));
        }
        let net = Arc::new(self.policy.compile()?);
        EvalContext::new(table, net, self.env.resolve()?)
    }
}
