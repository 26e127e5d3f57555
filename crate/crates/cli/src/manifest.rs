//! Run manifests: everything needed to repeat a run, and hashes of what it
//! produced. No wall-clock fields, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vivid_core::geometry::PoseRecord;
use vivid_core::toy::ToyStats;
use vivid_core::LatentFrames;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Marks a JSON document as a manifest; the loader then reads its `config`.
pub const MANIFEST_KEY: &str = "vivid_manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserIds {
    pub view: String,
    pub video: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub vivid_manifest: u32,
    pub tool_version: String,
    pub command: String,
    /// Effective configuration, with command-line overrides applied and the
    /// output directory left out.
    pub config: ExperimentConfig,
    pub denoisers: DenoiserIds,
    pub trajectory: Vec<PoseRecord>,
    /// SHA-256 of the input image file for image-space runs.
    pub input_image_sha256: Option<String>,
    /// SHA-256 of the final latents as little-endian f64.
    pub latents_sha256: String,
    /// Output path relative to the run directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub toy_stats: Option<ToyStats>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

pub fn latents_sha256(z: &LatentFrames) -> String {
    let mut h = Sha256::new();
    for v in z.as_slice() {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn latent_hash_sees_every_bit() {
        let a = LatentFrames::new([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = LatentFrames::new([1, 2, 1, 1], vec![1.0, f64::from_bits(2.0f64.to_bits() + 1)]).unwrap();
        assert_ne!(latents_sha256(&a), latents_sha256(&b));
        assert_eq!(latents_sha256(&a), latents_sha256(&a.clone()));
    }
}
