//! TOML configuration with `[engine]`, `[workload]` and `[experiment]`
//! sections. Every field is optional and falls back to its default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentPlan, ExperimentSettings};
use crate::workload::WorkloadSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub engine: EngineConfig,
    pub workload: WorkloadSpec,
    pub experiment: ExperimentSettings,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().validate()
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            settings: self.experiment.clone(),
            workload: self.workload.clone(),
            engine: self.engine.clone(),
        }
    }
}
