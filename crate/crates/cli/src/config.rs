//! Experiment configuration file (TOML or JSON).
//!
//! Every section is optional; missing keys fall back to the published
//! hyperparameters. Example:
//!
//! ```toml
//! [model.encoder]
//! hidden_layers = [64, 256, 512]
//! latent_dim = 128
//! dropout = [0.1, 0.2]
//!
//! [training]
//! epochs = 100
//! early_stop = false
//!
//! [training.optimizer]
//! alpha = 5e-4
//! beta1 = 0.1
//! beta2 = 0.99
//! ```

use std::path::Path;

use geoloc::dataset::{Environment, SplitSpec};
use geoloc::models::{ModelConfig, UmlpConfig};
use geoloc::nn::AdamConfig;
use geoloc::preprocess::{PreprocessConfig, DEFAULT_LOWER, DEFAULT_MISSING_THRESHOLD, DEFAULT_REPLACEMENT_DBM, DEFAULT_UPPER};
use geoloc::training::{EarlyStop, TrainConfig};
use geoloc::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub umlp: UmlpConfig,
    pub training: TrainingSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    /// Defaults to 256 indoors and for the unified model, 512 outdoors.
    pub batch_size: Option<usize>,
    pub optimizer: AdamConfig,
    pub early_stop: bool,
    pub patience: usize,
    pub min_delta: f64,
    pub multitask_weight: f64,
    pub freeze_base: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let es = EarlyStop::default();
        Self {
            epochs: 100,
            batch_size: None,
            optimizer: AdamConfig::default(),
            early_stop: true,
            patience: es.patience,
            min_delta: es.min_delta,
            multitask_weight: 1.0,
            freeze_base: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    /// Drop indoor transmitters missing in more than this fraction of samples.
    pub indoor_threshold: f64,
    /// Same for outdoor gateways; 1.0 keeps all of them.
    pub outdoor_threshold: f64,
    pub replacement_dbm: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            indoor_threshold: DEFAULT_MISSING_THRESHOLD,
            outdoor_threshold: 1.0,
            replacement_dbm: DEFAULT_REPLACEMENT_DBM,
            a: DEFAULT_LOWER,
            b: DEFAULT_UPPER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self {
            train: d.train_fraction,
            val: d.val_fraction,
            test: d.test_fraction,
        }
    }
}

impl ExperimentConfig {
    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    pub fn train_config(&self, env: Option<Environment>, seed: u64) -> TrainConfig {
        let t = &self.training;
        let default_batch = match env {
            Some(Environment::Outdoor) => 512,
            _ => 256,
        };
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size.unwrap_or(default_batch),
            optimizer: t.optimizer,
            seed,
            early_stop: t.early_stop.then_some(EarlyStop {
                patience: t.patience,
                min_delta: t.min_delta,
            }),
            multitask_weight: t.multitask_weight,
            freeze_base: t.freeze_base,
        }
    }

    pub fn preprocess_config(&self, env: Environment) -> PreprocessConfig {
        let p = &self.preprocess;
        PreprocessConfig {
            missing_threshold: Some(match env {
                Environment::Indoor => p.indoor_threshold,
                Environment::Outdoor => p.outdoor_threshold,
            }),
            replacement_dbm: p.replacement_dbm,
            a: p.a,
            b: p.b,
        }
    }

    pub fn split_spec(&self, seed: u64) -> Result<SplitSpec> {
        SplitSpec::new(self.split.train, self.split.val, self.split.test, seed)
    }
}
