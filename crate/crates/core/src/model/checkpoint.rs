//! Checkpoint container: magic, little-endian header length, JSON header,
//! then the raw little-endian `f32` parameter block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VSSCKPT1";

/// What a model was trained with; enough to tell the high-sensitivity and
/// high-specificity ensemble members apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub loss: String,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub parameters: Vec<f32>,
    pub fingerprint: TrainingFingerprint,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    fingerprint: TrainingFingerprint,
    n_params: usize,
}

impl ModelCheckpoint {
    pub fn from_network(net: &Network, fingerprint: TrainingFingerprint) -> Self {
        Self {
            config: net.config().clone(),
            parameters: net.parameters().to_vec(),
            fingerprint,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_parameters(self.config.clone(), self.parameters.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            fingerprint: self.fingerprint.clone(),
            n_params: self.parameters.len(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.parameters.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.parameters {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12 + hlen;
        if bytes.len() < body_start {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: hlen,
                found: bytes.len() - 12,
            });
        }
        let header: Header = serde_json::from_slice(&bytes[12..body_start]).map_err(|e| Error::Header {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let body = &bytes[body_start..];
        if body.len() != 4 * header.n_params {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 4 * header.n_params,
                found: body.len(),
            });
        }
        let parameters = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ckpt = Self {
            config: header.config,
            parameters,
            fingerprint: header.fingerprint,
        };
        // Parameter count must agree with the architecture.
        ckpt.network()?;
        Ok(ckpt)
    }
}

pub fn write_checkpoint(checkpoint: &ModelCheckpoint, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes, path)
}
