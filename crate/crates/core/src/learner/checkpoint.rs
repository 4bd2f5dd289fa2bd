//! Versioned parameter blobs tied to the config they were trained with.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub config_hash: String,
    pub algorithm: String,
    pub seed: u64,
    pub payload: T,
}

pub fn save<T: Serialize>(path: &Path, cfg: &ExperimentConfig, algorithm: &str, seed: u64, payload: &T) -> Result<()> {
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        config_hash: cfg.hash(),
        algorithm: algorithm.to_string(),
        seed,
        payload,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

/// Load a checkpoint, refusing blobs from another format or config.
pub fn load<T: DeserializeOwned>(path: &Path, cfg: &ExperimentConfig, algorithm: &str) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path)?;
    let ck: Checkpoint<T> = serde_json::from_slice(&bytes)?;
    if ck.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {} (expected {FORMAT_VERSION})", ck.format_version)));
    }
    if ck.config_hash != cfg.hash() {
        return Err(Error::Checkpoint(format!("trained with config {} but {} was given", ck.config_hash, cfg.hash())));
    }
    if ck.algorithm != algorithm {
        return Err(Error::Checkpoint(format!("holds {} parameters, not {algorithm}", ck.algorithm)));
    }
    Ok(ck)
}
