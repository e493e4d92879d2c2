use std::fs;
use std::path::{Path, PathBuf};

use pkml::allometry::AllometryConfig;
use pkml::diffusion::DiffusionConfig;
use pkml::transformer::TransformerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `run.out_dir`.
pub const OUT_DIR_ENV: &str = "PKML_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_patients: usize,
    pub n_physio: usize,
    pub n_drugs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            n_physio: 2000,
            n_drugs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Samples drawn from each ablation arm.
    pub ablation_samples: usize,
    /// Train the two ablation arms on separate threads.
    pub parallel_ablation: bool,
    /// Species left out of allometry training.
    pub holdout: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            ablation_samples: 2000,
            parallel_ablation: false,
            holdout: "Human".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub transformer: TransformerConfig,
    pub diffusion: DiffusionConfig,
    pub allometry: AllometryConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate().map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> pkml::Result<()> {
        self.transformer.validate()?;
        self.diffusion.validate()?;
        self.allometry.validate()?;
        if self.data.n_patients < 2 || self.data.n_physio == 0 || self.data.n_drugs == 0 {
            return Err(pkml::Error::Config("dataset sizes too small".into()));
        }
        if self.run.ablation_samples == 0 {
            return Err(pkml::Error::Config("ablation_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
