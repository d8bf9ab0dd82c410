use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PIPELINE_VERSION;
use crate::error::Result;

/// Stamped into every artifact so a result can be traced to its inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 (hex, first 16 chars) of the JSON of the configuration that produced the artifact.
    pub config_hash: String,
    pub pipeline_version: String,
}

impl Provenance {
    pub fn new(seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            seed,
            config_hash: config_hash(config)?,
            pipeline_version: PIPELINE_VERSION.to_string(),
        })
    }
}

pub fn config_hash(config: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}
