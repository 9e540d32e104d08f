//! Run provenance: every artifact-producing command records the resolved
//! configuration, input digests and outputs next to what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileStamp>,
    pub outputs: Vec<String>,
    pub created_unix_ms: u128,
}

impl RunManifest {
    pub fn new(seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: std::env::args().collect::<Vec<_>>().join(" "),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn record_input(&mut self, role: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).with_context(|| format!("reading {} for digest", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let mut sha256 = String::with_capacity(64);
        for b in digest {
            sha256.push_str(&format!("{b:02x}"));
        }
        self.inputs.insert(
            role.to_string(),
            FileStamp {
                path: path.display().to_string(),
                sha256,
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn record_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), json + "\n")
            .with_context(|| format!("writing manifest {}", path.as_ref().display()))?;
        Ok(())
    }
}
