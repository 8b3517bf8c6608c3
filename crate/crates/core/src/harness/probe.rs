use serde::{Deserialize, Serialize};

use super::synthetic::{Dataset, Sample};
use super::train::Classifier;
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamStore, Real, Tensor};
use crate::objective::argmax;

/// Which inputs a probe may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeInput {
    Audio,
    Visual,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub input: ProbeInput,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            input: ProbeInput::Audio,
            epochs: 300,
            learning_rate: 0.5,
            weight_decay: 0.0,
        }
    }
}

/// Multinomial logistic regression on flattened snippet features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    input: ProbeInput,
    weights: Tensor<f64>,
    bias: Tensor<f64>,
}

fn features<T: Real>(input: ProbeInput, s: &Sample<T>) -> Vec<f64> {
    let pick = |t: &Tensor<T>| t.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    match input {
        ProbeInput::Audio => pick(&s.audio),
        ProbeInput::Visual => pick(&s.visual),
        ProbeInput::Both => [pick(&s.audio), pick(&s.visual)].concat(),
    }
}

fn design<T: Real>(input: ProbeInput, data: &Dataset<T>) -> Result<Tensor<f64>> {
    let rows: Vec<Vec<f64>> = data.samples.iter().map(|s| features(input, s)).collect();
    Tensor::from_rows(&rows)
}

impl LinearProbe {
    /// Full-batch gradient descent on the mean cross-entropy from a zero start.
    pub fn fit<T: Real>(data: &Dataset<T>, classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("probe training data"));
        }
        let x = design(cfg.input, data)?;
        let labels = data.labels();
        let (n, d) = x.dims2()?;
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", Tensor::zeros(&[d, classes]));
        let b = store.register("b", Tensor::zeros(&[1, classes]));
        let ones = vec![1.0; n];
        for _ in 0..cfg.epochs {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let (wv, bv) = (g.param(&store, w), g.param(&store, b));
            let z = g.matmul(xv, wv)?;
            let z = g.add(z, bv)?;
            let p = g.softmax(z)?;
            let (mut loss, _) = g.weighted_nll(p, &labels, &ones, 1e-300)?;
            if cfg.weight_decay > 0.0 {
                let sq = g.mul(wv, wv)?;
                let sq = g.sum(sq);
                let sq = g.scale(sq, 0.5 * cfg.weight_decay);
                loss = g.add(loss, sq)?;
            }
            g.backward(loss)?;
            g.accumulate_into(&mut store)?;
            for id in [w, b] {
                let grad = store.grad(id).clone();
                for (p, gi) in store.value_mut(id).data_mut().iter_mut().zip(grad.data()) {
                    *p -= cfg.learning_rate * gi;
                }
            }
            store.zero_grads();
        }
        Ok(Self {
            input: cfg.input,
            weights: store.value(w).clone(),
            bias: store.value(b).clone(),
        })
    }

    pub fn input(&self) -> ProbeInput {
        self.input
    }
}

impl<T: Real> Classifier<T> for LinearProbe {
    fn classify(&self, audio: &Tensor<T>, visual: &Tensor<T>) -> Result<usize> {
        let s = Sample {
            audio: audio.clone(),
            visual: visual.clone(),
            label: 0,
        };
        let f = features(self.input, &s);
        let (d, k) = self.weights.dims2()?;
        if f.len() != d {
            return Err(Error::shape("probe", &[d], &[f.len()]));
        }
        let scores: Vec<f64> = (0..k)
            .map(|c| {
                self.bias.data()[c]
                    + f.iter()
                        .enumerate()
                        .map(|(i, x)| x * self.weights.at2(i, c))
                        .sum::<f64>()
            })
            .collect();
        Ok(argmax(&scores))
    }
}
