//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//!
//! [guided]
//! radius = 2
//! epsilon = 0.01
//!
//! [afm]
//! enabled = true
//! skip_connection = false
//! freeze_epoch_weights = true
//!
//! [model]
//! channels = [8, 16, 16]
//! use_mte = true
//! epochs = 6
//! batch_size = 1
//!
//! [optimizer]
//! learning_rate = 0.0005
//! gamma = 0.5
//!
//! [dataset]          # generator settings, see DatasetConfig
//! train_per_class = 500
//!
//! [data]
//! train_manifest = "data/train.tsv"
//! test_manifest = "data/test.tsv"
//! scenario = "raw"
//!
//! [ablation]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guided::GuidedFilterParams;
use crate::model::{FusionMethod, ModelConfig};
use crate::synth::{DatasetConfig, Scenario};
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfmSection {
    pub enabled: bool,
    pub skip_connection: bool,
    pub freeze_epoch_weights: bool,
}

impl Default for AfmSection {
    fn default() -> Self {
        AfmSection {
            enabled: true,
            skip_connection: false,
            freeze_epoch_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: Vec<usize>,
    pub input_size: usize,
    /// Taken from the data when unset; a conflicting value is an error.
    pub n_classes: Option<usize>,
    pub use_mte: bool,
    /// Fusion when attention fusion is disabled; defaults to `sum`.
    pub fusion: Option<FusionMethod>,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            channels: m.channels,
            input_size: m.input_size,
            n_classes: None,
            use_mte: m.use_mte,
            fusion: None,
            epochs: m.epochs,
            batch_size: m.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Scenario used by `train` and `eval`.
    pub scenario: Scenario,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_manifest: None,
            test_manifest: None,
            scenario: Scenario::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    pub scenarios: Vec<Scenario>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            seeds: (0..5).collect(),
            scenarios: Scenario::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub guided: GuidedFilterParams,
    pub afm: AfmSection,
    pub model: ModelSection,
    pub optimizer: AdamConfig,
    pub dataset: DatasetConfig,
    pub data: DataSection,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            // toml renders a multi-line excerpt; keep the message itself
            Error::Config(e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config_for(self.model.n_classes.unwrap_or(self.dataset.classes))?;
        self.dataset.validate()
    }

    /// The model configuration these sections describe, with the class
    /// count of the `[dataset]` section.
    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model_config_for(self.dataset.classes)
    }

    /// The model configuration for data with `classes` labels.
    pub fn model_config_for(&self, classes: usize) -> Result<ModelConfig> {
        let n_classes = match self.model.n_classes {
            Some(n) if n != classes => {
                return Err(Error::Config(format!(
                    "model.n_classes = {n} but the data has {classes} classes"
                )))
            }
            _ => classes,
        };
        let fusion = match (self.afm.enabled, self.model.fusion) {
            (true, None | Some(FusionMethod::Afm)) => FusionMethod::Afm,
            (true, Some(f)) => {
                return Err(Error::Config(format!(
                    "model.fusion = {f:?} conflicts with afm.enabled = true"
                )))
            }
            (false, Some(FusionMethod::Afm)) => {
                return Err(Error::Config(
                    "model.fusion = \"afm\" requires afm.enabled = true".into(),
                ))
            }
            (false, f) => f.unwrap_or(FusionMethod::Sum),
        };
        let cfg = ModelConfig {
            channels: self.model.channels.clone(),
            input_size: self.model.input_size,
            n_classes,
            use_mte: self.model.use_mte,
            use_afm: self.afm.enabled,
            fusion,
            skip_connection: self.afm.skip_connection,
            freeze_epoch_weights: self.afm.freeze_epoch_weights,
            guided: self.guided,
            optimizer: self.optimizer,
            epochs: self.model.epochs,
            batch_size: self.model.batch_size,
            seed: self.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
