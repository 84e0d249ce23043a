use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::model::{HiTConfig, HiTModel};
use crate::nn::{load_params_into, save_params, DType, Real};
use crate::syntax::Language;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

/// Describes the weights stored next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: HiTConfig,
    pub dtype: DType,
    pub language: Language,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

/// Writes manifest, parameters and vocabularies into `dir`, creating it.
pub fn save_checkpoint<T: Real>(dir: &Path, model: &HiTModel<T>, vocabs: &Vocabs, manifest: &Manifest) -> Result<()> {
    if manifest.config != model.config || manifest.dtype != T::DTYPE {
        return Err(Error::InvalidConfig("manifest does not describe the model".into()));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    save_params(&model.params, &dir.join(PARAMS_FILE))?;
    vocabs.save(dir)
}

/// Rebuilds a ready model from a checkpoint directory.
pub fn load_checkpoint<T: Real>(dir: &Path) -> Result<(HiTModel<T>, Vocabs, Manifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingCheckpoint(dir.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("manifest: {e}")))?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::CorruptCheckpoint(format!(
            "stored as {:?}, requested {:?}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    let vocabs = Vocabs::load(dir).map_err(|e| match e {
        Error::MissingFile(p) => Error::MissingCheckpoint(p),
        other => other,
    })?;
    let mut model = HiTModel::new(manifest.config.clone(), manifest.seed)?;
    load_params_into(&dir.join(PARAMS_FILE), &mut model.params).map_err(|e| match e {
        Error::MissingFile(p) => Error::MissingCheckpoint(p),
        other => other,
    })?;
    model.mark_ready();
    Ok((model, vocabs, manifest))
}
