use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{MfccConfig, MfccMatrix, Waveform};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided spectrum, peak height 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Filters with centres evenly spaced on the mel scale between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> MelFilterbank {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let weights = (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect();
    MelFilterbank {
        weights,
        centers_hz: edges[1..=n_mels].to_vec(),
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// `|X[k]|^2` for `k` in `0..=n_fft/2` of the zero-padded frame.
pub fn power_spectrum(frame: &[f64], n_fft: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    fft.process(&mut buf);
    buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Orthonormal DCT-II basis, `n_out x n_in`.
fn dct_basis(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            (0..n_in)
                .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos())
                .collect()
        })
        .collect()
}

/// Framing → Hamming window → power spectrum → mel filterbank → log → DCT-II.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<MfccMatrix> {
    cfg.validate()?;
    let x = w.samples();
    if x.len() < cfg.frame_length {
        return Err(Error::InputLength {
            needed: cfg.frame_length,
            got: x.len(),
        });
    }
    let frames = 1 + (x.len() - cfg.frame_length) / cfg.hop;
    let window = hamming(cfg.frame_length);
    let bank = mel_filterbank(cfg.n_mels, cfg.n_fft, w.sample_rate());
    let dct = dct_basis(cfg.n_mels, cfg.n_mfcc);
    let mut planner = FftPlanner::new();

    let mut data = Vec::with_capacity(frames * cfg.n_mfcc);
    let mut frame = vec![0.0; cfg.frame_length];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, v) in frame.iter_mut().enumerate() {
            *v = x[start + i] * window[i];
        }
        let power = power_spectrum(&frame, cfg.n_fft, &mut planner);
        let log_mel: Vec<f64> = bank
            .apply(&power)
            .into_iter()
            .map(|e| (e + cfg.log_floor).ln())
            .collect();
        data.extend(
            dct.iter()
                .map(|basis| basis.iter().zip(&log_mel).map(|(a, b)| a * b).sum::<f64>()),
        );
    }
    MfccMatrix::new(Tensor::new(vec![frames, cfg.n_mfcc], data)?)
}
