//! Single structured config: one TOML file with per-module sections, every
//! field defaulted so partial files work. The desk profile scales the run
//! down to workstation size without touching the algorithm constants.

use crate::diffusion::{DenoiserConfig, GuidanceConfig};
use crate::dynamics::LqrConfig;
use crate::explorer::ExplorerConfig;
use crate::features::FeatureConfig;
use crate::pretrain::PretrainConfig;
use crate::rl::{GrpoConfig, PpoConfig, RftConfig};
use crate::scenario::SynthConfig;
use crate::scorer::ScorerConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Config {
    pub dynamics: LqrConfig,
    pub scorer: ScorerConfig,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub denoiser: DenoiserConfig,
    pub explorer: ExplorerConfig,
    pub guidance: GuidanceConfig,
    pub ppo: PpoConfig,
    pub grpo: GrpoConfig,
    pub rft: RftConfig,
    pub pretrain: PretrainConfig,
}

impl Config {
    /// Workstation-sized run: fewer environments and a worker count bounded
    /// by the host, with all algorithm constants left at their defaults.
    pub fn desk() -> Self {
        let mut cfg = Config::default();
        cfg.ppo.envs = 8;
        cfg.rft.workers = std::thread::available_parallelism()
            .map(|c| c.get().min(8))
            .unwrap_or(4);
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
