//! Run configuration: one JSON document with `dsp`, `model` and `train`
//! sections. Absent sections and keys take their defaults; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspConfig;
use crate::model::MfcmNetConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub model: MfcmNetConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.dsp.validate().map_err(|e| invalid(format!("dsp: {e}")))?;
        self.model.validate().map_err(|e| invalid(format!("model: {e}")))?;
        self.train.validate().map_err(|e| invalid(format!("train: {e}")))?;
        let [_, h, w] = self.model.input_shape;
        if (h, w) != (self.train.input_height, self.train.input_width) {
            return Err(invalid(format!(
                "model.input_shape {h}×{w} differs from train input {}×{}",
                self.train.input_height, self.train.input_width
            )));
        }
        Ok(())
    }

    /// Replaces the model input size and the training input size together.
    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.model.input_shape = [3, height, width];
        self.train.input_height = height;
        self.train.input_width = width;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.train.seed, 1337);
        assert_eq!(cfg.dsp.n_mels, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"optim": {}}"#), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn semantic_checks() {
        assert!(matches!(
            RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"train": {"input_height": 96, "input_width": 96}}"#),
            Err(ConfigError::Invalid(_))
        ));
        let json = serde_json::to_string(&RunConfig::default().with_input_size(96, 64)).unwrap();
        assert_eq!(RunConfig::from_json(&json).unwrap().model.input_shape, [3, 96, 64]);
    }
}
