//! Checkpoint directories: `params.safetensors`, `config.json` (the full
//! run config) and `vocab.txt`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};

use crate::config::{RunConfig, VSE_SHAPE_KEYS};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::vse::Vocabulary;

pub const PARAMS_FILE: &str = "params.safetensors";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";

pub struct LoadedCheckpoint {
    pub dir: PathBuf,
    pub tensors: HashMap<String, Tensor>,
    pub config: RunConfig,
    pub vocab: Vocabulary,
}

/// Write a checkpoint. Files go to a sibling staging directory first and
/// are renamed into place, so an interrupted save leaves any previous
/// checkpoint at `dir` intact.
pub fn save_checkpoint(dir: &Path, store: &ParamStore, config: &RunConfig, vocab: &Vocabulary) -> Result<()> {
    let staging = dir.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let tensors: HashMap<String, Tensor> = store.tensors().into_iter().collect();
    candle_core::safetensors::save(&tensors, staging.join(PARAMS_FILE))?;
    fs::write(staging.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;
    fs::write(staging.join(VOCAB_FILE), vocab.to_text())?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

/// Read a checkpoint without checking it against any config.
pub fn read_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let corrupt = |detail: String| Error::CorruptFile {
        path: dir.to_path_buf(),
        detail,
    };
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint directory {} not found", dir.display()),
        )));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE)).map_err(|e| corrupt(format!("{PARAMS_FILE}: {e}")))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)
        .map_err(|e| corrupt(format!("{PARAMS_FILE}: {e}")))?;
    let config_text =
        fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| corrupt(format!("{CONFIG_FILE}: {e}")))?;
    let config: RunConfig =
        serde_json::from_str(&config_text).map_err(|e| corrupt(format!("{CONFIG_FILE}: {e}")))?;
    let vocab_text =
        fs::read_to_string(dir.join(VOCAB_FILE)).map_err(|e| corrupt(format!("{VOCAB_FILE}: {e}")))?;
    let vocab = Vocabulary::from_text(&vocab_text).map_err(|e| corrupt(format!("{VOCAB_FILE}: {e}")))?;
    Ok(LoadedCheckpoint {
        dir: dir.to_path_buf(),
        tensors,
        config,
        vocab,
    })
}

/// Read a checkpoint and require its shape-determining settings to equal
/// those of `expected`.
pub fn load_checkpoint(dir: &Path, expected: &RunConfig) -> Result<LoadedCheckpoint> {
    let ckpt = read_checkpoint(dir)?;
    expected.check_shapes_match(&ckpt.config)?;
    Ok(ckpt)
}

/// Like [`load_checkpoint`] but only the embedding's shape keys must agree.
pub fn load_vse_checkpoint(dir: &Path, expected: &RunConfig) -> Result<LoadedCheckpoint> {
    let ckpt = read_checkpoint(dir)?;
    expected.check_keys_match(&ckpt.config, VSE_SHAPE_KEYS)?;
    Ok(ckpt)
}
