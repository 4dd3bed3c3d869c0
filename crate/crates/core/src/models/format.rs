use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RegressionModel;
use crate::dataset::StandardizationParams;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A model plus what is needed to feed it raw patient values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub model: RegressionModel,
    /// Names of the model's input columns, in order.
    pub feature_names: Vec<String>,
    /// Standardizer restricted to `feature_names`.
    pub standardizer: StandardizationParams,
    pub config_digest: String,
}

impl SavedModel {
    pub fn new(
        model: RegressionModel,
        feature_names: Vec<String>,
        standardizer: StandardizationParams,
        config_digest: String,
    ) -> Result<Self> {
        let saved = Self {
            format_version: MODEL_FORMAT_VERSION,
            model,
            feature_names,
            standardizer,
            config_digest,
        };
        saved.validate()?;
        Ok(saved)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model.validate()?;
        let d = self.model.input_dim();
        if self.feature_names.len() != d || self.standardizer.dim() != d {
            return Err(Error::ModelFormat(format!(
                "model takes {d} inputs but lists {} feature names and {} standardizer columns",
                self.feature_names.len(),
                self.standardizer.dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: Self = serde_json::from_str(text).map_err(|e| Error::json("model file", e))?;
        saved.validate()?;
        Ok(saved)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// SHA-256 of the canonical JSON form of a training configuration.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
