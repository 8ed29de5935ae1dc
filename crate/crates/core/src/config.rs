//! Reward configuration file and its content hash.
//!
//! The file is TOML with optional `[normalization]`, `[think]`, `[clamp]`,
//! `[composer]` and `[composer.weights]` sections. Missing keys keep their
//! defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::composer::ComposerConfig;
use crate::kernels::{NormalizationPolicy, ThinkRewardParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Upper clamps on the two components that can exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Clamping {
    pub xml: bool,
    pub visit_search: bool,
}

impl Default for Clamping {
    fn default() -> Self {
        Self {
            xml: true,
            visit_search: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub normalization: NormalizationPolicy,
    pub think: ThinkRewardParams,
    pub clamp: Clamping,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    #[serde(flatten)]
    pub rewards: RewardConfig,
    pub composer: ComposerConfig,
}

impl LabConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: LabConfig =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.composer;
        if c.log_arg_floor.is_nan() || c.log_arg_floor <= 0.0 {
            return Err(ConfigError::Invalid("log_arg_floor must be > 0".into()));
        }
        let w = &c.weights;
        if [w.w_tool, w.w_format, w.w_think, w.w_xml, w.w_vs]
            .iter()
            .any(|x| x.is_nan() || *x < 0.0)
        {
            return Err(ConfigError::Invalid("weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Hex prefix of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Applies a partial composer config on top of this one.
    pub fn with_composer_overrides(&self, overrides: &Value) -> Result<Self, ConfigError> {
        let mut base = serde_json::to_value(self.composer).expect("config serializes");
        merge(&mut base, overrides);
        let composer: ComposerConfig =
            serde_json::from_value(base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cfg = LabConfig { composer, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}
