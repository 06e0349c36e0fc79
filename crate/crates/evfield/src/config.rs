//! Experiment configuration file: one TOML document covering the generator,
//! trainer, probe, and evaluation settings. Unknown keys are rejected;
//! normalization makes every default explicit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::ProbeConfig;
use crate::synthgen::SyntheticCorpusConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Segmentation samples averaged per embedding.
    pub seg_samples: usize,
    /// Fraction of event fields used for probe training.
    pub train_frac: f64,
    /// Severity of the robustness suite, in [0, 1].
    pub severity: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seg_samples: 4,
            train_frac: 0.8,
            severity: 0.5,
            seed: 99,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seg_samples == 0 {
            return Err(Error::Config("seg_samples must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.train_frac) || self.train_frac == 0.0 {
            return Err(Error::Config("train_frac must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::Config("severity must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub generator: SyntheticCorpusConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Serialize with every default made explicit; idempotent under reparse.
    pub fn to_normalized_toml(&self) -> Result<String> {
        let value = toml::Value::try_from(self)
            .map_err(|e| Error::Config(format!("unserializable config: {e}")))?;
        toml::to_string_pretty(&value).map_err(|e| Error::Config(format!("{e}")))
    }
}
