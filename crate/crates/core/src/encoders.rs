//! Snippet encoders producing the `s x C1` feature matrices consumed by fusion.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{blob, Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Audio => Modality::Visual,
            Modality::Visual => Modality::Audio,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

/// One modality's per-snippet embeddings, `s x C1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetFeatures<T> {
    modality: Modality,
    matrix: Tensor<T>,
}

impl<T: Real> SnippetFeatures<T> {
    pub fn new(modality: Modality, matrix: Tensor<T>) -> Result<Self> {
        let (s, c) = matrix.dims2()?;
        if s == 0 || c == 0 {
            return Err(Error::invalid(
                "SnippetFeatures",
                "need at least one snippet and channel",
            ));
        }
        if !matrix.all_finite() {
            return Err(Error::Numerical(format!("non-finite {} features", modality.name())));
        }
        Ok(Self { modality, matrix })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn snippets(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn into_matrix(self) -> Tensor<T> {
        self.matrix
    }

    /// Loads precomputed features stored as a single-tensor blob.
    pub fn read_blob(modality: Modality, path: &Path) -> Result<Self> {
        let mut tensors = blob::read_file::<T>(path)?;
        if tensors.len() != 1 {
            return Err(Error::Format(format!(
                "feature file must hold one tensor, found {}",
                tensors.len()
            )));
        }
        Self::new(modality, tensors.remove(0).1)
    }

    pub fn write_blob(&self, path: &Path) -> Result<()> {
        blob::write_file(path, &[(self.modality.name(), &self.matrix)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Frames per visual snippet (T).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// MFCC rows per audio snippet (q / s).
    pub audio_rows: usize,
    pub audio_coeffs: usize,
    pub hidden: usize,
    /// Output channels (C1).
    pub channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 8,
            width: 8,
            audio_rows: 16,
            audio_coeffs: 13,
            hidden: 32,
            channels: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.frames,
            self.height,
            self.width,
            self.audio_rows,
            self.audio_coeffs,
            self.hidden,
            self.channels,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub trait SnippetEncoder<T: Real> {
    fn modality(&self) -> Modality;

    fn channels(&self) -> usize;

    /// Records the encoding of `snippets` into `g`, returning an `s x C1` node.
    fn encode_graph(&self, g: &mut Graph<T>, snippets: &[Tensor<T>]) -> Result<Var>;

    fn encode(&self, snippets: &[Tensor<T>]) -> Result<SnippetFeatures<T>> {
        let mut g = Graph::new();
        let v = self.encode_graph(&mut g, snippets)?;
        SnippetFeatures::new(self.modality(), g.value(v).clone())
    }
}

/// Mean pooling over every axis but the last, then a two-layer tanh perceptron.
/// Snippets are encoded independently and stacked in temporal order.
#[derive(Debug, Clone)]
pub struct ToyEncoder<T> {
    modality: Modality,
    input_shape: Vec<usize>,
    channels: usize,
    store: ParamStore<T>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl<T: Real> ToyEncoder<T> {
    /// Visual encoder over `T x H x W x 3` snippets.
    pub fn visual(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::build(
            Modality::Visual,
            vec![cfg.frames, cfg.height, cfg.width, 3],
            cfg.hidden,
            cfg.channels,
            rng,
        ))
    }

    /// Audio encoder over `(q/s) x n_mfcc` MFCC chunks.
    pub fn audio(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::build(
            Modality::Audio,
            vec![cfg.audio_rows, cfg.audio_coeffs],
            cfg.hidden,
            cfg.channels,
            rng,
        ))
    }

    fn build(modality: Modality, input_shape: Vec<usize>, hidden: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let features = *input_shape.last().expect("non-empty input shape");
        let prefix = modality.name();
        let mut store = ParamStore::new();
        let w1 = store.register_glorot(format!("{prefix}.w1"), features, hidden, rng);
        let b1 = store.register(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]));
        let w2 = store.register_glorot(format!("{prefix}.w2"), hidden, channels, rng);
        let b2 = store.register(format!("{prefix}.b2"), Tensor::zeros(&[1, channels]));
        Self {
            modality,
            input_shape,
            channels,
            store,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

impl<T: Real> SnippetEncoder<T> for ToyEncoder<T> {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn encode_graph(&self, g: &mut Graph<T>, snippets: &[Tensor<T>]) -> Result<Var> {
        if snippets.is_empty() {
            return Err(Error::Empty("snippets"));
        }
        let features = *self.input_shape.last().expect("non-empty input shape");
        let rows: usize = self.input_shape[..self.input_shape.len() - 1].iter().product();
        let (w1, b1, w2, b2) = (
            g.param(&self.store, self.w1),
            g.param(&self.store, self.b1),
            g.param(&self.store, self.w2),
            g.param(&self.store, self.b2),
        );
        let mut out = Vec::with_capacity(snippets.len());
        for snip in snippets {
            if snip.shape() != self.input_shape.as_slice() {
                return Err(Error::shape("encode", &self.input_shape, snip.shape()));
            }
            let x = g.input(snip.clone().reshape(&[rows, features])?);
            let pooled = g.mean_pool(x, 0)?;
            let h = g.matmul(pooled, w1)?;
            let h = g.add(h, b1)?;
            let h = g.tanh(h);
            let y = g.matmul(h, w2)?;
            out.push(g.add(y, b2)?);
        }
        g.concat(&out, 0)
    }
}

/// Passes precomputed per-snippet rows through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityEncoder {
    modality: Modality,
    channels: usize,
}

impl IdentityEncoder {
    pub fn new(modality: Modality, channels: usize) -> Self {
        Self { modality, channels }
    }
}

impl<T: Real> SnippetEncoder<T> for IdentityEncoder {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn channels(&self) -> usize {
        self.channels
    }

    /// Each snippet is a `C1` or `1 x C1` row.
    fn encode_graph(&self, g: &mut Graph<T>, snippets: &[Tensor<T>]) -> Result<Var> {
        if snippets.is_empty() {
            return Err(Error::Empty("snippets"));
        }
        let rows = snippets
            .iter()
            .map(|s| {
                if s.len() != self.channels {
                    return Err(Error::shape("identity encode", &[1, self.channels], s.shape()));
                }
                Ok(g.input(s.clone().reshape(&[1, self.channels])?))
            })
            .collect::<Result<Vec<_>>>()?;
        g.concat(&rows, 0)
    }
}

/// Splits `total` frames into `s` equal segments and picks `t` successive frames
/// at a random offset inside each, preserving temporal order.
pub fn sample_snippet_frames(total: usize, s: usize, t: usize, rng: &mut impl Rng) -> Result<Vec<Range<usize>>> {
    if s == 0 || t == 0 {
        return Err(Error::Config(
            "snippet count and frames per snippet must be positive".into(),
        ));
    }
    let seg = total / s;
    if seg < t {
        return Err(Error::Config(format!(
            "{total} frames give segments of {seg}, fewer than T={t}"
        )));
    }
    Ok((0..s)
        .map(|j| {
            let start = j * seg + rng.gen_range(0..=seg - t);
            start..start + t
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(9)
    }

    fn noise(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_frames_with_zero_bias_give_zero_features() {
        let cfg = EncoderConfig::default();
        let enc = ToyEncoder::<f64>::visual(&cfg, &mut rng()).unwrap();
        let snippets = vec![Tensor::zeros(&[4, 8, 8, 3]); 4];
        let f = enc.encode(&snippets).unwrap();
        assert_eq!(f.matrix().shape(), &[4, 16]);
        assert!(f.matrix().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn audio_shape_contract_and_zero_rows() {
        let cfg = EncoderConfig::default();
        let enc = ToyEncoder::<f64>::audio(&cfg, &mut rng()).unwrap();
        let mut snippets = vec![
            noise(&[16, 13], 1),
            Tensor::zeros(&[16, 13]),
            noise(&[16, 13], 2),
            noise(&[16, 13], 3),
        ];
        let f = enc.encode(&snippets).unwrap();
        assert_eq!(f.matrix().shape(), &[4, 16]);
        assert!(f.matrix().row(1).iter().all(|&v| v == 0.0));
        snippets[0] = Tensor::zeros(&[15, 13]);
        assert!(enc.encode(&snippets).is_err());
    }

    #[test]
    fn per_snippet_independence() {
        let cfg = EncoderConfig::default();
        let enc = ToyEncoder::<f64>::visual(&cfg, &mut rng()).unwrap();
        let snippets: Vec<_> = (0..4).map(|j| noise(&[4, 8, 8, 3], 10 + j)).collect();
        let base = enc.encode(&snippets).unwrap();

        let mut permuted = snippets.clone();
        permuted.swap(0, 3);
        let p = enc.encode(&permuted).unwrap();
        assert_eq!(p.matrix().row(0), base.matrix().row(3));
        assert_eq!(p.matrix().row(3), base.matrix().row(0));
        assert_eq!(p.matrix().row(1), base.matrix().row(1));

        let mut changed = snippets;
        changed[2] = noise(&[4, 8, 8, 3], 99);
        let c = enc.encode(&changed).unwrap();
        for r in [0, 1, 3] {
            assert_eq!(c.matrix().row(r), base.matrix().row(r));
        }
        assert_ne!(c.matrix().row(2), base.matrix().row(2));
    }

    #[test]
    fn identity_passes_rows_through() {
        let enc = IdentityEncoder::new(Modality::Audio, 3);
        let rows = vec![noise(&[3], 1), noise(&[1, 3], 2)];
        let f = SnippetEncoder::<f64>::encode(&enc, &rows).unwrap();
        assert_eq!(f.matrix().row(0), rows[0].data());
        assert_eq!(f.matrix().row(1), rows[1].data());
    }

    #[test]
    fn feature_blob_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fa.bin");
        let f = SnippetFeatures::new(Modality::Audio, noise(&[4, 16], 5)).unwrap();
        f.write_blob(&path).unwrap();
        assert_eq!(SnippetFeatures::<f64>::read_blob(Modality::Audio, &path).unwrap(), f);
    }

    #[test]
    fn frame_sampling_keeps_order_and_segments() {
        let mut r = rng();
        let ranges = sample_snippet_frames(100, 4, 8, &mut r).unwrap();
        assert_eq!(ranges.len(), 4);
        for (j, rg) in ranges.iter().enumerate() {
            assert_eq!(rg.len(), 8);
            assert!(rg.start >= j * 25 && rg.end <= (j + 1) * 25);
        }
        assert!(sample_snippet_frames(10, 4, 3, &mut r).is_err());
    }
}
