//! Audio frontend: MFCC descriptors, fixed-length crop/pad and snippet chunking.

mod mfcc;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use mfcc::{hz_to_mel, mel_filterbank, mel_to_hz, mfcc, power_spectrum, MelFilterbank};

/// Mono PCM signal with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform samples"));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Reads a single-channel 16-bit PCM WAV file.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Config(format!(
                "expected mono 16-bit PCM, got {} channel(s), {} bits, {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes the signal as mono 16-bit PCM.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_length: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 26,
            n_mfcc: 13,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.sample_rate > 0
            && self.frame_length > 0
            && self.hop > 0
            && self.n_fft > 0
            && self.n_mels > 0
            && self.n_mfcc > 0
            && self.log_floor > 0.0;
        if !positive {
            return Err(Error::Config(format!("MFCC parameters must be positive: {self:?}")));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < self.frame_length {
            return Err(Error::Config(format!(
                "n_fft {} must be a power of two >= frame_length {}",
                self.n_fft, self.frame_length
            )));
        }
        if self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "n_mfcc {} exceeds n_mels {}",
                self.n_mfcc, self.n_mels
            )));
        }
        Ok(())
    }
}

/// `frames x n_mfcc` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix(Tensor<f64>);

impl MfccMatrix {
    pub fn new(t: Tensor<f64>) -> Result<Self> {
        let (frames, _) = t.dims2()?;
        if frames == 0 {
            return Err(Error::Empty("MFCC frames"));
        }
        Ok(Self(t))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn coeffs(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.0.row(r)
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<f64> {
        self.0
    }

    fn select_rows(&self, rows: impl Iterator<Item = usize>) -> Self {
        let c = self.coeffs();
        let data: Vec<f64> = rows.flat_map(|r| self.row(r).to_vec()).collect();
        let n = data.len() / c;
        Self(Tensor::new(vec![n, c], data).expect("rows have width c"))
    }
}

/// Centre-crops or cyclically self-pads to exactly `q` frames.
///
/// A surplus is split with the extra frame (odd surplus) dropped from the end.
/// A shortfall is filled by repeating the matrix from its first row.
pub fn crop_pad(m: &MfccMatrix, q: usize) -> Result<MfccMatrix> {
    if q == 0 {
        return Err(Error::Config("target length q must be >= 1".into()));
    }
    let n = m.frames();
    Ok(if n >= q {
        let start = (n - q) / 2;
        m.select_rows(start..start + q)
    } else {
        m.select_rows((0..q).map(|i| i % n))
    })
}

/// Splits `m` into `s` contiguous equal chunks in temporal order.
pub fn snippetize(m: &MfccMatrix, s: usize) -> Result<Vec<MfccMatrix>> {
    let q = m.frames();
    if s == 0 || !q.is_multiple_of(s) {
        return Err(Error::Config(format!(
            "{q} frames cannot be split into {s} equal snippets"
        )));
    }
    let len = q / s;
    Ok((0..s).map(|j| m.select_rows(j * len..(j + 1) * len)).collect())
}

/// MFCC → crop/pad → snippets for one waveform.
pub fn audio_snippets(w: &Waveform, cfg: &MfccConfig, q: usize, s: usize) -> Result<Vec<MfccMatrix>> {
    if s == 0 || !q.is_multiple_of(s) {
        return Err(Error::Config(format!("q={q} is not divisible by s={s}")));
    }
    let m = mfcc(w, cfg)?;
    snippetize(&crop_pad(&m, q)?, s)
}
