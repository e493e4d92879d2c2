use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Self-describing parameter snapshot. Floats are written in shortest
/// round-trip form, so load(save(x)) is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub module_name: String,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<Vec<f64>>,
    pub optimizer: Option<AdamState>,
    /// Model-specific metadata (architecture config, normalisation stats).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn capture(
        module_name: &str,
        store: &ParamStore,
        optimizer: Option<&AdamState>,
        extra: serde_json::Value,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            module_name: module_name.to_string(),
            names: store.names().to_vec(),
            shapes: store.tensors().iter().map(|t| t.shape().to_vec()).collect(),
            params: store.tensors().iter().map(|t| t.data().to_vec()).collect(),
            optimizer: optimizer.cloned(),
            extra,
        }
    }

    /// Rebuilds the parameter store; all tensors come back trainable.
    pub fn restore_store(&self) -> Result<ParamStore> {
        if self.names.len() != self.shapes.len() || self.shapes.len() != self.params.len() {
            return Err(Error::Contract("checkpoint field lengths disagree".into()));
        }
        let mut store = ParamStore::new();
        for ((name, shape), data) in self.names.iter().zip(&self.shapes).zip(&self.params) {
            store.add(name.clone(), Tensor::new(shape, data.clone())?);
        }
        Ok(store)
    }

    pub fn expect_module(&self, module_name: &str) -> Result<()> {
        if self.module_name != module_name {
            return Err(Error::Contract(format!(
                "checkpoint is for `{}`, expected `{module_name}`",
                self.module_name
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported format_version {}", ck.format_version),
            });
        }
        Ok(ck)
    }
}
