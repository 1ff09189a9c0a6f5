//! Parameter persistence: config, seed and every tensor in one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamSet,
}

impl ParameterStore {
    pub fn new(config: ModelConfig, seed: u64, params: ParamSet) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config,
            seed,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        if self.params.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::Domain("refusing to store non-finite parameters".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let store: Self = serde_json::from_str(s)?;
        if store.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "parameter file version {} (expected {FORMAT_VERSION})",
                store.format_version
            )));
        }
        store.config.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
