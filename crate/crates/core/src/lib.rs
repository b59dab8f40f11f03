//! Toolkit for studying how speech recognizers trained on close-talking
//! audio transfer to distant-microphone audio.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`sigproc`]: WAV I/O and the 80-dimensional log-Mel front end.
//! * [`roomsim`]: image-method room impulse responses and room sampling.
//! * [`augment`]: reverberant / noisy corpus generation.
//! * [`autodiff`]: a small reverse-mode engine with SGD and Adam.
//! * [`models`]: TDNN acoustic models and feature enhancers.
//! * [`fhvae`]: factorized hierarchical VAE for latent features.
//! * [`harness`]: synthetic corpus, experiment grid and reports.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod fhvae;
pub mod harness;
pub mod labels;
pub mod manifest;
pub mod models;
pub mod roomsim;
pub mod sigproc;
mod util;

pub use error::{Error, ErrorClass, Result};
