//! Checkpoint files: the binary `PIBK1` parameter container plus a JSON
//! sidecar (`<checkpoint>.json`) holding the model configuration.

use std::path::{Path, PathBuf};

use replay_core::autodiff::{decode_checkpoint, encode_checkpoint};
use replay_core::{ModelConfig, ReplayModel};

use crate::error::{Error, Result};
use crate::formats::{read_json, write_file, write_json};

pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save_model(path: impl AsRef<Path>, model: &ReplayModel) -> Result<()> {
    let path = path.as_ref();
    write_file(path, encode_checkpoint(model.store()))?;
    write_json(config_path(path), model.config())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ReplayModel> {
    let path = path.as_ref();
    let cfg: ModelConfig = read_json(config_path(path))?;
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let params = decode_checkpoint(&bytes)?;
    Ok(ReplayModel::with_params(&cfg, &params)?)
}
