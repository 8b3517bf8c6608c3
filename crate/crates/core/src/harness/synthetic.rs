use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// Audio latent values; label = z_a + AUDIO_LATENTS * z_v.
pub const AUDIO_LATENTS: usize = 3;
/// Visual latent values.
pub const VISUAL_LATENTS: usize = 2;
pub const SYNTHETIC_CLASSES: usize = AUDIO_LATENTS * VISUAL_LATENTS;

/// A two-modality task in which neither modality alone identifies the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskConfig {
    pub snippets: usize,
    pub channels: usize,
    /// Standard deviation of the per-entry Gaussian noise.
    pub sigma: f64,
    /// Standard deviation of the prototype entries.
    pub prototype_scale: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            snippets: 4,
            channels: 16,
            sigma: 0.5,
            prototype_scale: 1.0,
            train_samples: 64,
            test_samples: 256,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snippets == 0 || self.channels == 0 {
            return Err(Error::Config("snippets and channels must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma {} must be finite and non-negative",
                self.sigma
            )));
        }
        if !(self.prototype_scale > 0.0 && self.prototype_scale.is_finite()) {
            return Err(Error::Config("prototype_scale must be positive".into()));
        }
        Ok(())
    }
}

pub fn audio_latent(label: usize) -> usize {
    label % AUDIO_LATENTS
}

pub fn visual_latent(label: usize) -> usize {
    label / AUDIO_LATENTS
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    /// `snippets x channels`.
    pub audio: Tensor<T>,
    pub visual: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    audio: s.audio.cast(),
                    visual: s.visual.cast(),
                    label: s.label,
                })
                .collect(),
        }
    }
}

/// Class prototypes for each modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub audio: Vec<Tensor<f64>>,
    pub visual: Vec<Tensor<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data length")
}

fn prototypes(cfg: &SyntheticTaskConfig) -> Prototypes {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = [cfg.snippets, cfg.channels];
    Prototypes {
        audio: (0..AUDIO_LATENTS)
            .map(|_| gaussian(&mut rng, &shape, cfg.prototype_scale))
            .collect(),
        visual: (0..VISUAL_LATENTS)
            .map(|_| gaussian(&mut rng, &shape, cfg.prototype_scale))
            .collect(),
    }
}

fn split(cfg: &SyntheticTaskConfig, protos: &Prototypes, n: usize, stream: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let samples = (0..n)
        .map(|i| {
            // cycling through the labels keeps every split balanced
            let label = i % SYNTHETIC_CLASSES;
            let mut audio = protos.audio[audio_latent(label)].clone();
            let mut visual = protos.visual[visual_latent(label)].clone();
            if cfg.sigma > 0.0 {
                for x in audio.data_mut().iter_mut().chain(visual.data_mut().iter_mut()) {
                    *x += cfg.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                }
            }
            Sample { audio, visual, label }
        })
        .collect();
    Dataset { samples }
}

/// Seeded train and test splits plus the prototypes they were drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub prototypes: Prototypes,
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
}

pub fn gen_synthetic(cfg: &SyntheticTaskConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    for group in [&protos.audio, &protos.visual] {
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                if group[i] == group[j] {
                    return Err(Error::Numerical("two prototypes coincide".into()));
                }
            }
        }
    }
    Ok(SyntheticTask {
        train: split(cfg, &protos, cfg.train_samples, 1),
        test: split(cfg, &protos, cfg.test_samples, 2),
        prototypes: protos,
    })
}
