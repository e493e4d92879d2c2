use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
    pub timings_s: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| pkml::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            seed,
            artifacts: Vec::new(),
            metrics: BTreeMap::new(),
            timings_s: BTreeMap::new(),
        }
    }

    /// Records checksums relative to `root`.
    pub fn add_artifacts(&mut self, root: &Path, paths: &[PathBuf]) -> CliResult<()> {
        for p in paths {
            let file = p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned();
            let sha256 = sha256_file(p)?;
            self.artifacts.retain(|a| a.file != file);
            self.artifacts.push(Artifact { file, sha256 });
        }
        self.artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(format!("run_{}.json", self.command));
        pkml::io::write_json(&path, self)?;
        Ok(path)
    }
}
