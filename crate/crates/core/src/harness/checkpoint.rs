//! Checkpoint directories: parameters, optimizer state, RNG position and history.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{EpochRecord, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::lgf::{LgfConfig, LgfModel};
use crate::numcore::{blob, Precision, Real};

pub const PARAMS_FILE: &str = "params.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Human-readable description of the parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub precision: Precision,
    pub parameter_count: usize,
    pub parameters: Vec<ParamEntry>,
    pub model: LgfConfig,
}

/// Exact position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, kept as a decimal string for JSON portability.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad RNG word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub steps: usize,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
}

pub fn manifest<T: Real>(model: &LgfModel<T>) -> Manifest {
    let parameters: Vec<ParamEntry> = model
        .store()
        .named_values()
        .map(|(n, v)| ParamEntry {
            name: n.to_string(),
            shape: v.shape().to_vec(),
        })
        .collect();
    Manifest {
        precision: T::PRECISION,
        parameter_count: model.store().numel(),
        parameters,
        model: model.config().clone(),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes the model parameters and manifest only.
pub fn save_model<T: Real>(model: &LgfModel<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors: Vec<_> = model.store().named_values().collect();
    blob::write_file(&dir.join(PARAMS_FILE), &tensors)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest(model))
}

/// Rebuilds a model from a directory written by [`save_model`] or [`save_trainer`].
pub fn load_model<T: Real>(dir: &Path) -> Result<LgfModel<T>> {
    let man: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if man.precision != T::PRECISION {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, requested {}",
            man.precision.tag(),
            T::PRECISION.tag()
        )));
    }
    // initial values are overwritten, so any seed will do
    let mut model = LgfModel::new(man.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    model
        .store_mut()
        .load_values(blob::read_file(&dir.join(PARAMS_FILE))?)?;
    Ok(model)
}

/// Writes everything needed to resume training bit-exactly.
pub fn save_trainer<T: Real>(trainer: &Trainer<T>, dir: &Path) -> Result<()> {
    save_model(&trainer.model, dir)?;
    let names: Vec<&str> = trainer.model.store().named_values().map(|(n, _)| n).collect();
    let velocity: Vec<_> = names.iter().copied().zip(trainer.velocity.iter()).collect();
    blob::write_file(&dir.join(OPTIMIZER_FILE), &velocity)?;
    let state = TrainState {
        epochs_done: trainer.history.len(),
        steps: trainer.steps,
        rng: RngState::capture(&trainer.rng),
        history: trainer.history.clone(),
        config: trainer.cfg.clone(),
    };
    write_json(&dir.join(STATE_FILE), &state)
}

pub fn load_trainer<T: Real>(dir: &Path) -> Result<Trainer<T>> {
    let model = load_model::<T>(dir)?;
    let state: TrainState = read_json(&dir.join(STATE_FILE))?;
    if state.config.model != *model.config() {
        return Err(Error::Format(
            "state and manifest disagree on the model configuration".into(),
        ));
    }
    let velocity = blob::read_file::<T>(&dir.join(OPTIMIZER_FILE))?;
    let mut trainer = Trainer::with_model(model, state.config, state.rng.restore()?);
    if velocity.len() != trainer.velocity.len() {
        return Err(Error::Format("optimizer state does not match the parameters".into()));
    }
    for ((slot, (name, v)), (pname, _)) in trainer
        .velocity
        .iter_mut()
        .zip(velocity)
        .zip(trainer.model.store().named_values())
    {
        if name != pname || slot.shape() != v.shape() {
            return Err(Error::Format(format!(
                "optimizer entry {name} does not match parameter {pname}"
            )));
        }
        *slot = v;
    }
    trainer.steps = state.steps;
    trainer.history = state.history;
    Ok(trainer)
}
