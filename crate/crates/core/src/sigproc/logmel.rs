use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, FeatureKind, FeatureMatrix};
use crate::{Error, Result};

/// Front-end parameters. Defaults: 25 ms Hamming window, 10 ms hop,
/// 512-point FFT, 80 mel filters over 20 Hz - 8 kHz, 1e-10 energy floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            sample_rate: super::SAMPLE_RATE,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 80,
            f_min: 20.0,
            f_max: 8000.0,
            floor: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `1 + floor((n - window) / hop)`, or `None` when `n < window`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> Option<usize> {
    if n < window || hop == 0 {
        None
    } else {
        Some(1 + (n - window) / hop)
    }
}

/// Triangular filters on the mel scale, evaluated at FFT bin frequencies.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x (n_fft / 2 + 1)`
    pub weights: Array2<f64>,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
    /// Band edges in Hz; filter `m` spans `edges[m]..edges[m + 2]`.
    pub edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &LogMelConfig) -> Self {
        let n_bins = config.n_fft / 2 + 1;
        let lo = hz_to_mel(config.f_min);
        let hi = hz_to_mel(config.f_max);
        let step = (hi - lo) / (config.n_mels + 1) as f64;
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + step * i as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
        let mut weights = Array2::zeros((config.n_mels, n_bins));
        for m in 0..config.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        let centers = edges[1..=config.n_mels].to_vec();
        Self {
            weights,
            centers,
            edges,
        }
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

/// Log-Mel energies in double precision, `T x n_mels`.
pub fn log_mel_energies(samples: &[f64], config: &LogMelConfig) -> Result<Array2<f64>> {
    if config.n_fft < config.window {
        return Err(Error::Argument(format!(
            "n_fft {} shorter than window {}",
            config.n_fft, config.window
        )));
    }
    let frames = frame_count(samples.len(), config.window, config.hop).ok_or_else(|| {
        Error::EmptyInput(format!(
            "{} samples is shorter than one {}-sample window",
            samples.len(),
            config.window
        ))
    })?;
    let bank = MelFilterbank::new(config);
    let window = hamming(config.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.n_fft);
    let n_bins = config.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); config.n_fft];
    let mut power = vec![0.0; n_bins];
    let mut out = Array2::zeros((frames, config.n_mels));
    for t in 0..frames {
        let start = t * config.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < config.window {
                Complex::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..config.n_mels {
            let e: f64 = bank
                .weights
                .row(m)
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            out[[t, m]] = e.max(config.floor).ln();
        }
    }
    Ok(out)
}

/// Log-Mel features of a clip.
pub fn logmel(clip: &AudioClip, config: &LogMelConfig) -> Result<FeatureMatrix> {
    if clip.sample_rate != config.sample_rate {
        return Err(Error::Argument(format!(
            "clip {} has sample rate {}, front end expects {}",
            clip.id, clip.sample_rate, config.sample_rate
        )));
    }
    if config.n_mels != 80 {
        return Err(Error::Argument(format!(
            "log-mel features are 80-dimensional, config asks for {}",
            config.n_mels
        )));
    }
    let energies = log_mel_energies(&clip.to_f64(), config)?;
    let frames = energies.mapv(|v| v as f32);
    let shift = config.hop as f64 / config.sample_rate as f64;
    FeatureMatrix::new(frames, shift, FeatureKind::LogMel, clip.id.clone())
}
