use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Provenance of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input artifacts and their checksums.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the run directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Records the checksum of `dir/name`.
    pub fn add_artifact(&mut self, dir: &Path, name: &str) -> CliResult<()> {
        let sum = file_sha256(&dir.join(name))?;
        self.artifacts.insert(name.to_string(), sum);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(&dir.join(RUN_MANIFEST), text.as_bytes())
    }
}
