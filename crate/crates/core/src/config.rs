//! Experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of training scenes.
    pub train: Option<PathBuf>,
    /// Directory of held-out scenes used for validation and `eval`.
    pub eval: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Side of the square xy blocks scenes are cut into; whole scenes when absent.
    pub block_size: Option<f64>,
    /// Window size for voting; the training point count when absent.
    pub points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { train_scenes: 64, test_scenes: 16, points: 2048 }
    }
}

/// Everything a run needs. Unknown keys are rejected at parse time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub paths: Paths,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl RunConfig {
    /// The reduced three-class setup used for synthetic rooms.
    pub fn toy() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            class_names: crate::data::TOY_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            paths: Paths::default(),
            network: NetworkConfig::toy(3),
            train: TrainConfig::toy(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        let aux = self.train.loss.aux_weights.len();
        if aux != 0 && aux != self.network.layers.len() {
            return Err(Error::Config(format!(
                "{} auxiliary weights for {} encoder layers",
                self.train.loss.aux_weights.len(),
                self.network.layers.len()
            )));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.network.num_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.network.num_classes
            )));
        }
        if matches!(self.eval.block_size, Some(b) if !(b > 0.0)) {
            return Err(Error::Config("block size must be positive".into()));
        }
        if self.eval.points == Some(0) || self.synth.points == 0 {
            return Err(Error::Config("point counts must be positive".into()));
        }
        Ok(())
    }

    pub fn eval_points(&self) -> usize {
        self.eval.points.unwrap_or(self.train.points)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
