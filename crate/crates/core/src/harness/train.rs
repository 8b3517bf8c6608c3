use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::Dataset;
use crate::error::{Error, Result};
use crate::lgf::{LgfConfig, LgfModel};
use crate::numcore::{Graph, Precision, Real, Tensor};
use crate::objective::{metrics, multi_task_loss_graph, predictions, LossConfig, LossTelemetry, Metrics, PolarityMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Mini-batches whose gradients are accumulated before one optimizer step.
    pub deferred_every: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub precision: Precision,
    pub seed: u64,
    /// Reshuffle the sample order every epoch.
    pub shuffle: bool,
    pub loss: LossConfig,
    pub polarity: PolarityMap,
    pub model: LgfConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            deferred_every: 4,
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 100,
            precision: Precision::F64,
            seed: 0,
            shuffle: true,
            loss: LossConfig::default(),
            polarity: PolarityMap::default(),
            model: LgfConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.deferred_every == 0 {
            return Err(Error::Config("deferred_every must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.polarity.classes() < self.model.classes {
            return Err(Error::Config(format!(
                "polarity map covers {} classes, model has {}",
                self.polarity.classes(),
                self.model.classes
            )));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

/// Anything that assigns a class to a pair of snippet feature matrices.
pub trait Classifier<T> {
    fn classify(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<usize>;
}

impl<T: Real> Classifier<T> for LgfModel<T> {
    fn classify(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<usize> {
        self.predict(audio, visual)
    }
}

/// Deterministic classification report over a dataset.
pub fn evaluate<T: Real, C: Classifier<T> + ?Sized>(model: &C, data: &Dataset<T>, classes: usize) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let preds = data
        .samples
        .iter()
        .map(|s| model.classify(&s.audio, &s.visual))
        .collect::<Result<Vec<_>>>()?;
    metrics(&preds, &data.labels(), classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the multi-task loss.
    pub loss: f64,
    /// Accuracy (percent) of the fused prediction on the batches as they were trained.
    pub train_acc: f64,
    pub steps: usize,
    pub telemetry: LossTelemetry,
}

/// SGD with momentum and deferred (accumulated) updates.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub(crate) model: LgfModel<T>,
    pub(crate) cfg: TrainConfig,
    pub(crate) velocity: Vec<Tensor<T>>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) steps: usize,
    pub(crate) history: Vec<EpochRecord>,
}

impl<T: Real> Trainer<T> {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "configured precision {} but trainer runs at {}",
                cfg.precision.tag(),
                T::PRECISION.tag()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = LgfModel::new(cfg.model.clone(), &mut rng)?;
        Ok(Self::with_model(model, cfg, rng))
    }

    /// Wraps an existing model; the shuffling RNG continues from `rng`.
    pub fn with_model(model: LgfModel<T>, cfg: TrainConfig, rng: ChaCha8Rng) -> Self {
        let velocity = model
            .store()
            .ids()
            .map(|id| Tensor::zeros(model.store().value(id).shape()))
            .collect();
        Self {
            model,
            cfg,
            velocity,
            rng,
            steps: 0,
            history: Vec::new(),
        }
    }

    pub fn model(&self) -> &LgfModel<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut LgfModel<T> {
        &mut self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Adds `weight * d(loss)/d(params)` of one mini-batch to the stored gradients.
    /// Returns the unweighted loss, the batch predictions and telemetry.
    pub fn accumulate_batch(
        &mut self,
        data: &Dataset<T>,
        idx: &[usize],
        weight: f64,
    ) -> Result<(f64, Vec<usize>, LossTelemetry)> {
        let mut g = Graph::new();
        let batch: Vec<_> = idx
            .iter()
            .map(|&i| (&data.samples[i].audio, &data.samples[i].visual))
            .collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
        let logits = self.model.forward_batch(&mut g, &batch)?;
        let (loss, tel) = multi_task_loss_graph(
            &mut g,
            logits.overall,
            logits.visual,
            logits.audio,
            &labels,
            &self.cfg.loss,
            &self.cfg.polarity,
        )?;
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {value} at epoch {} step {} (batch of {})",
                self.history.len(),
                self.steps,
                idx.len()
            )));
        }
        let preds = predictions(g.value(logits.overall))?;
        let scaled = g.scale(loss, T::of(weight));
        g.backward(scaled)?;
        g.accumulate_into(self.model.store_mut())?;
        Ok((value, preds, tel))
    }

    /// One momentum step with the stored gradients, which are then cleared.
    pub fn apply_update(&mut self) {
        let lr = T::of(self.cfg.learning_rate);
        let mu = T::of(self.cfg.momentum);
        let ids: Vec<_> = self.model.store().ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = self.model.store().grad(id).clone();
            let v = &mut self.velocity[k];
            for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                *vi = mu * *vi + *gi;
            }
            let v = self.velocity[k].clone();
            for (p, vi) in self.model.store_mut().value_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p = *p - lr * *vi;
            }
        }
        self.model.store_mut().zero_grads();
        self.steps += 1;
    }

    /// One pass over `data` in (optionally shuffled) mini-batches.
    ///
    /// Each batch loss is weighted by `batch_len / batch_size` and divided by the number
    /// of batches in its update window, so a window of equal full batches steps with
    /// the gradient of the mean loss over their union.
    pub fn run_epoch(&mut self, data: &Dataset<T>) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        if self.cfg.shuffle {
            order.shuffle(&mut self.rng);
        }
        let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        let steps_before = self.steps;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut telemetry = LossTelemetry::default();
        for window in batches.chunks(self.cfg.deferred_every) {
            for batch in window {
                let weight = batch.len() as f64 / self.cfg.batch_size as f64 / window.len() as f64;
                let (loss, preds, tel) = self.accumulate_batch(data, batch, weight)?;
                loss_sum += loss;
                correct += preds
                    .iter()
                    .zip(batch.iter())
                    .filter(|(p, &i)| **p == data.samples[i].label)
                    .count();
                telemetry.clamped += tel.clamped;
                telemetry.polarity_mismatches += tel.polarity_mismatches;
            }
            self.apply_update();
        }
        let record = EpochRecord {
            epoch: self.history.len() + 1,
            loss: loss_sum / batches.len() as f64,
            train_acc: 100.0 * correct as f64 / data.len() as f64,
            steps: self.steps - steps_before,
            telemetry,
        };
        log::debug!(
            "epoch {} loss {:.6} acc {:.2}",
            record.epoch,
            record.loss,
            record.train_acc
        );
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs the configured number of epochs.
    pub fn train(&mut self, data: &Dataset<T>) -> Result<&[EpochRecord]> {
        for _ in 0..self.cfg.epochs {
            self.run_epoch(data)?;
        }
        Ok(&self.history)
    }

    pub fn evaluate(&self, data: &Dataset<T>) -> Result<Metrics> {
        evaluate(&self.model, data, self.cfg.model.classes)
    }
}
