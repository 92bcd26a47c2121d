//! The run configuration file: one TOML document with a section per component.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::world::{DatasetConfig, WorldConfig};

/// Every knob of `gen`, `train` and `eval`. Missing keys take the documented defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.camera.validate()?;
        self.world.scene.base.validate()?;
        self.model.validate()?;
        if (self.model.height, self.model.width) != (self.world.camera.height, self.world.camera.width) {
            return Err(Error::Config(format!(
                "model input {}x{} does not match camera {}x{}",
                self.model.height, self.model.width, self.world.camera.height, self.world.camera.width
            )));
        }
        self.train_config().validate()
    }

    /// Training settings with the `[loss]` section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { loss: self.loss, ..self.train.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
