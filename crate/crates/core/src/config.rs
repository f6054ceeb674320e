//! The single configuration file that drives every pipeline stage.

use std::path::{Path, PathBuf};

use cirl_sim::SimConfig;
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::demo::DemoConfig;
use crate::error::{CirlError, Result};
use crate::expert::ExpertConfig;
use crate::il::ILConfig;
use crate::policy::PolicyConfig;
use crate::reward::RewardConfig;
use crate::rl::RLConfig;
use crate::seeding::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub expert: ExpertConfig,
    pub demo: DemoConfig,
    pub policy: PolicyConfig,
    pub il: ILConfig,
    pub rl: RLConfig,
    pub bench: BenchConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs"),
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            expert: ExpertConfig::default(),
            demo: DemoConfig::default(),
            policy: PolicyConfig::default(),
            il: ILConfig::default(),
            rl: RLConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CirlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CirlError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.demo.validate()?;
        self.policy.validate()?;
        self.il.validate()?;
        self.rl.validate()?;
        self.bench.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml_string().as_bytes())
    }

    /// First 16 hex digits of [`GlobalConfig::hash`], as embedded in output files.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}
