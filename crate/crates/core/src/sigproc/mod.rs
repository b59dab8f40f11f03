//! Audio I/O and the log-Mel filterbank front end.

mod feat;
mod logmel;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use feat::{read_feat, write_feat, FEAT_MAGIC, FEAT_VERSION};
pub use logmel::{
    frame_count, hz_to_mel, log_mel_energies, logmel, mel_to_hz, LogMelConfig, MelFilterbank,
};
pub use wav::{read_wav, write_wav};

use crate::{Error, Result};

/// Toolkit-wide sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { op: "audio_clip" });
        }
        Ok(Self {
            id: id.into(),
            samples,
            sample_rate,
        })
    }

    pub fn silence(id: impl Into<String>, len: usize, sample_rate: u32) -> Self {
        Self {
            id: id.into(),
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    LogMel,
    Z1Mean,
    Z1MeanLogvar,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::LogMel => "log-mel",
            FeatureKind::Z1Mean => "z1-mean",
            FeatureKind::Z1MeanLogvar => "z1-mean+logvar",
        }
    }
}

/// `T x F` feature frames with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f32>,
    /// Seconds between consecutive frames.
    pub frame_shift: f64,
    pub kind: FeatureKind,
    pub source_id: String,
}

impl FeatureMatrix {
    pub fn new(
        frames: Array2<f32>,
        frame_shift: f64,
        kind: FeatureKind,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if frames.nrows() == 0 {
            return Err(Error::EmptyInput(format!("feature matrix for {source_id}")));
        }
        if kind == FeatureKind::LogMel && frames.ncols() != 80 {
            return Err(Error::shape(
                "feature_matrix",
                format!("log-mel features need 80 columns, got {}", frames.ncols()),
            ));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op: "feature_matrix" });
        }
        Ok(Self {
            frames,
            frame_shift,
            kind,
            source_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}
