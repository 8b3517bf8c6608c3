//! Synthetic data, the training loop, evaluation, probes and checkpoints.

pub mod checkpoint;
mod gradcheck;
mod probe;
mod synthetic;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, load_trainer, manifest, save_model, save_trainer, Manifest, RngState, TrainState};
pub use gradcheck::model_grad_check;
pub use probe::{LinearProbe, ProbeConfig, ProbeInput};
pub use synthetic::{
    audio_latent, gen_synthetic, visual_latent, Dataset, Prototypes, Sample, SyntheticTask, SyntheticTaskConfig,
    AUDIO_LATENTS, SYNTHETIC_CLASSES, VISUAL_LATENTS,
};
pub use train::{evaluate, Classifier, EpochRecord, TrainConfig, Trainer};

use crate::error::{Error, Result};

/// Top-level configuration file for training runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticTaskConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        let m = &self.train.model;
        if m.snippets != self.data.snippets || m.channels != self.data.channels {
            return Err(Error::Config(format!(
                "model expects {}x{} inputs, data produces {}x{}",
                m.snippets, m.channels, self.data.snippets, self.data.channels
            )));
        }
        if m.classes != SYNTHETIC_CLASSES {
            return Err(Error::Config(format!(
                "synthetic task has {SYNTHETIC_CLASSES} classes, model has {}",
                m.classes
            )));
        }
        Ok(())
    }

    /// Overrides both the data and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }
}
