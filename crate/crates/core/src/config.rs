//! Harness configuration file (TOML), one section per subsystem.
//!
//! ```toml
//! group_size = 8
//! seed = 7
//!
//! [reward]
//! gamma = 4.0
//! delta = 0.2
//!
//! [sandbox]
//! timeout_seconds = 15.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::AdvantageConfig;
use crate::reward::{RewardConfig, RewardError};
use crate::sandbox::{SandboxConfig, SandboxError};
use crate::sim::{DEFAULT_GROUP_SIZE, MAX_TURNS_EVAL, MAX_TURNS_TRAIN};

pub const WORKDIR_ENV: &str = "TOOLLOOP_WORKDIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub reward: RewardConfig,
    pub advantage: AdvantageConfig,
    pub sandbox: SandboxConfig,
    pub group_size: usize,
    pub max_turns_train: usize,
    pub max_turns_eval: usize,
    pub seed: u64,
    /// Whether `sandbox.guest_command` came from the file rather than the
    /// default.
    #[serde(skip)]
    pub guest_command_explicit: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            reward: RewardConfig::default(),
            advantage: AdvantageConfig::default(),
            sandbox: SandboxConfig::default(),
            group_size: DEFAULT_GROUP_SIZE,
            max_turns_train: MAX_TURNS_TRAIN,
            max_turns_eval: MAX_TURNS_EVAL,
            seed: 0,
            guest_command_explicit: false,
        }
    }
}

impl HarnessConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let parse = |msg: String| ConfigError::Parse {
            path: origin.to_path_buf(),
            msg,
        };
        let raw: toml::Table = toml::from_str(text).map_err(|e| parse(e.to_string()))?;
        let explicit = raw
            .get("sandbox")
            .and_then(|s| s.get("guest_command"))
            .is_some();
        let mut cfg: HarnessConfig = raw
            .try_into()
            .map_err(|e: toml::de::Error| parse(e.to_string()))?;
        cfg.guest_command_explicit = explicit;
        Ok(cfg)
    }

    /// Reads a config file and applies the workdir environment override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(WORKDIR_ENV).filter(|d| !d.is_empty()) {
            self.sandbox.workdir_root = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward.validate()?;
        self.sandbox.validate()?;
        if self.group_size < 2 {
            return Err(ConfigError::Invalid(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.max_turns_train == 0 || self.max_turns_eval == 0 {
            return Err(ConfigError::Invalid(
                "turn budgets must be at least 1".into(),
            ));
        }
        if !(self.advantage.clip_eps > 0.0 && self.advantage.clip_eps < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "advantage.clip_eps must lie in (0, 1), got {}",
                self.advantage.clip_eps
            )));
        }
        Ok(())
    }
}
