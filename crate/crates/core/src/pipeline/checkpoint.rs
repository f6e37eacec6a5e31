//! Checkpoint directories: the weight archive plus `model.toml` holding the
//! architecture needed to rebuild the parameter layout.

use std::fs;
use std::path::Path;

use crate::model::{load_archive, save_archive, Model, ModelConfig};
use crate::{Error, Result, Scalar};

pub const MODEL_CONFIG_FILE: &str = "model.toml";

pub fn save_checkpoint<T: Scalar>(dir: &Path, model: &Model<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = toml::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MODEL_CONFIG_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    save_archive(dir, model)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Model<T>> {
    let path = dir.join(MODEL_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: ModelConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut model = Model::new(config, 0)?;
    load_archive(dir, &mut model)?;
    Ok(model)
}
