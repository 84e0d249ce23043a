use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Schedule;
use crate::error::{Error, Result};
use crate::model::HiTConfig;
use crate::probe::ProbeConfig;
use crate::syntax::Language;

/// Everything a run reads from its TOML file, as one flat table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: HiTConfig,
    #[serde(flatten)]
    pub schedule: Schedule,
    #[serde(flatten)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub language: Language,
    /// Keys no section claimed; must stay empty.
    #[serde(flatten, skip_serializing)]
    unknown: BTreeMap<String, toml::Value>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        if let Some(key) = cfg.unknown.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }
}
