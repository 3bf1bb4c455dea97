//! Run manifests: what produced an artifact directory.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Git-style object hash (`blob <len>\0<bytes>`), SHA-256 flavour.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub precision: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFile>,
    /// Hash over the input hashes, in order.
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    precision: String,
    config: serde_json::Value,
    inputs: Vec<InputFile>,
    started: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, precision: &str, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            precision: precision.to_string(),
            config,
            inputs: Vec::new(),
            started: now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            hash: blob_hash(&bytes),
        });
        Ok(())
    }

    pub fn write(self, dir: &Path, outputs: &[&str]) -> std::io::Result<()> {
        let joined: String = self.inputs.iter().map(|i| i.hash.as_str()).collect::<Vec<_>>().join("\n");
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            precision: self.precision,
            config: self.config,
            input_hash: blob_hash(joined.as_bytes()),
            inputs: self.inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            started: self.started,
            finished: now(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(blob_hash(b"a"), blob_hash(b"b"));
    }
}
