//! Run configuration: one TOML document with a top-level seed and one table
//! per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CostModel, EngineConfig, EngineMode, RecomputePolicy};
use crate::placement::PartitionConfig;
use crate::scheduler::Policy;
use crate::semlib::{EmbeddingConfig, LshConfig, DEFAULT_BUDGET};
use crate::workload::SynthConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemlibSection {
    pub budget: usize,
    pub embedding: EmbeddingConfig,
    pub lsh: LshConfig,
}

impl Default for SemlibSection {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            embedding: EmbeddingConfig::default(),
            lsh: LshConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub mode: EngineMode,
    pub remote_fetch: bool,
    pub recompute: RecomputePolicy,
    pub cost: CostModel,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            mode: e.mode,
            remote_fetch: e.remote_fetch,
            recompute: e.recompute,
            cost: e.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seeds every randomized step.
    pub seed: u64,
    pub workload: SynthConfig,
    pub placement: PartitionConfig,
    pub semlib: SemlibSection,
    pub scheduler: Policy,
    pub engine: EngineSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            workload: SynthConfig::default(),
            placement: PartitionConfig::with_k(40),
            semlib: SemlibSection::default(),
            scheduler: Policy::default(),
            engine: EngineSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.workload.validate().map_err(|e| invalid(&e))?;
        self.placement.validate().map_err(|e| invalid(&e))?;
        self.semlib.embedding.validate().map_err(|e| invalid(&e))?;
        self.semlib.lsh.validate().map_err(|e| invalid(&e))?;
        if self.semlib.budget == 0 {
            return Err(ConfigError::Invalid("semlib budget must be at least 1".into()));
        }
        self.scheduler.validate().map_err(|e| invalid(&e))?;
        self.engine_config().validate().map_err(|e| invalid(&e))
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            mode: self.engine.mode,
            cost: self.engine.cost.clone(),
            recompute: self.engine.recompute.clone(),
            remote_fetch: self.engine.remote_fetch,
            seed: self.seed,
        }
    }
}
