//! Corrupted-corpus generation: reverberation by RIR convolution, plus
//! optional gain offset and white noise.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::manifest::{Manifest, ManifestEntry};
use crate::roomsim::Rir;
use crate::sigproc::{read_wav, write_wav, AudioClip};
use crate::util::{create_dir_all, hash_str, rng_for};
use crate::{Error, Result};

/// Full linear convolution (`x.len() + h.len() - 1` samples) by FFT
/// overlap-add.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n_fft = (2 * h.len()).next_power_of_two().max(64);
    let block = n_fft - h.len() + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    let mut h_spec: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    h_spec.resize(n_fft, Complex::new(0.0, 0.0));
    fwd.process(&mut h_spec);

    let scale = 1.0 / n_fft as f64;
    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for start in (0..x.len()).step_by(block) {
        let chunk = &x[start..(start + block).min(x.len())];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(chunk.get(i).copied().unwrap_or(0.0), 0.0);
        }
        fwd.process(&mut buf);
        for (b, hs) in buf.iter_mut().zip(&h_spec) {
            *b *= hs;
        }
        inv.process(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            if let Some(o) = out.get_mut(start + i) {
                *o += v.re * scale;
            }
        }
    }
    out
}

/// Reverberates `clip` with `rir`. The result is advanced by the RIR's
/// direct-path index and truncated to the input length, so frame `t` of the
/// output stays aligned with frame `t` of the input.
pub fn convolve(clip: &AudioClip, rir: &Rir) -> Result<AudioClip> {
    if clip.sample_rate != rir.sample_rate {
        return Err(Error::Argument(format!(
            "clip {} at {} Hz, RIR at {} Hz",
            clip.id, clip.sample_rate, rir.sample_rate
        )));
    }
    let full = fft_convolve(&clip.to_f64(), &rir.taps);
    let delay = rir.direct_index();
    let samples: Vec<f32> = (0..clip.samples.len())
        .map(|i| full.get(i + delay).copied().unwrap_or(0.0) as f32)
        .collect();
    AudioClip::new(clip.id.clone(), samples, clip.sample_rate)
}

/// A generator of corrupted copies of clean audio.
#[derive(Debug, Clone)]
pub struct CorruptionSpec {
    /// Empty disables reverberation.
    pub rir_pool: Vec<Arc<Rir>>,
    pub snr_db: Option<f64>,
    pub gain_db: Option<f64>,
    /// Skip peak normalization after convolution.
    pub keep_gain: bool,
    pub seed: u64,
    /// Domain tag written into the output manifest.
    pub domain: String,
}

impl CorruptionSpec {
    pub fn reverb(pool: Vec<Arc<Rir>>, seed: u64, domain: impl Into<String>) -> Self {
        Self {
            rir_pool: pool,
            snr_db: None,
            gain_db: None,
            keep_gain: false,
            seed,
            domain: domain.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Argument("SNR must be finite".into()));
            }
        }
        if let Some(g) = self.gain_db {
            if !g.is_finite() {
                return Err(Error::Argument("gain offset must be finite".into()));
            }
        }
        Ok(())
    }

    /// Pool index used for utterance `id`, if reverberation is on.
    pub fn rir_choice(&self, id: &str) -> Option<usize> {
        if self.rir_pool.is_empty() {
            return None;
        }
        let mut rng = rng_for(self.seed, &[hash_str(id)]);
        Some(rng.random_range(0..self.rir_pool.len()))
    }

    /// Applies reverb, peak normalization, gain and noise in that order.
    pub fn corrupt(&self, clip: &AudioClip) -> Result<AudioClip> {
        self.validate()?;
        let mut rng = rng_for(self.seed, &[hash_str(&clip.id)]);
        let mut out = clip.clone();
        if !self.rir_pool.is_empty() {
            let idx = rng.random_range(0..self.rir_pool.len());
            out = convolve(clip, &self.rir_pool[idx])?;
            if !self.keep_gain {
                let (target, current) = (clip.peak(), out.peak());
                if current > 0.0 {
                    let scale = target / current;
                    out.samples.iter_mut().for_each(|s| *s *= scale);
                }
            }
        }
        if let Some(db) = self.gain_db {
            let g = 10f64.powf(db / 20.0) as f32;
            out.samples.iter_mut().for_each(|s| *s *= g);
        }
        if let Some(snr) = self.snr_db {
            let n = out.samples.len().max(1) as f64;
            let power = out.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n;
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            for s in out.samples.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *s += (sigma * z) as f32;
            }
        }
        if out.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { op: "corrupt" });
        }
        Ok(out)
    }
}

/// Writes one corrupted clip per manifest entry into `out_dir` and returns
/// the new manifest (also written as `out_dir/manifest.jsonl`). Labels keep
/// pointing at the clean stream. On any failure nothing is left behind.
pub fn generate(manifest: &Manifest, spec: &CorruptionSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    create_dir_all(out_dir)?;
    let out_dir = fs::canonicalize(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = out_dir.join(format!(".staging-{}", std::process::id()));
    create_dir_all(&staging)?;

    let staged: Result<Vec<(PathBuf, ManifestEntry)>> = manifest
        .entries()
        .par_iter()
        .map(|entry| {
            let clip = read_wav(&entry.audio).map_err(|e| Error::data(&entry.id, e.to_string()))?;
            let clip = AudioClip { id: entry.id.clone(), ..clip };
            let noisy = spec
                .corrupt(&clip)
                .map_err(|e| Error::data(&entry.id, e.to_string()))?;
            let name = format!("{}.wav", entry.id);
            let tmp = staging.join(&name);
            write_wav(&noisy, &tmp).map_err(|e| Error::data(&entry.id, e.to_string()))?;
            Ok((
                tmp,
                ManifestEntry {
                    id: entry.id.clone(),
                    audio: out_dir.join(&name),
                    domain: spec.domain.clone(),
                    labels: entry.labels.clone(),
                },
            ))
        })
        .collect();

    let staged = match staged {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    for (tmp, entry) in &staged {
        fs::rename(tmp, &entry.audio).map_err(|e| Error::io(&entry.audio, e))?;
    }
    let _ = fs::remove_dir_all(&staging);
    let out = Manifest::new(staged.into_iter().map(|(_, e)| e).collect())?;
    out.write(out_dir.join("manifest.jsonl"))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn direct(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len() + h.len() - 1];
        for (i, &a) in x.iter().enumerate() {
            for (j, &b) in h.iter().enumerate() {
                y[i + j] += a * b;
            }
        }
        y
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn fft_matches_direct() {
        let x = noise(1000, 1);
        let h = noise(200, 2);
        let a = fft_convolve(&x, &h);
        let b = direct(&x, &h);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_impulse_is_identity() {
        let clip = AudioClip::new("u", noise(500, 3).iter().map(|&v| v as f32).collect(), 16000).unwrap();
        let mut taps = vec![0.0; 64];
        taps[0] = 1.0;
        let out = convolve(&clip, &Rir::from_taps(taps, 16000).unwrap()).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn delayed_half_impulse_is_compensated() {
        let clip = AudioClip::new("u", noise(500, 4).iter().map(|&v| v as f32).collect(), 16000).unwrap();
        let mut taps = vec![0.0; 300];
        taps[137] = 0.5;
        let rir = Rir::from_taps(taps, 16000).unwrap();
        assert_eq!(rir.direct_index(), 137);
        let out = convolve(&clip, &rir).unwrap();
        for (o, i) in out.samples.iter().zip(&clip.samples) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn rate_mismatch() {
        let clip = AudioClip::silence("u", 100, 8000);
        let rir = Rir::from_taps(vec![1.0], 16000).unwrap();
        assert!(matches!(convolve(&clip, &rir), Err(Error::Argument(_))));
    }

    #[test]
    fn choice_depends_on_seed_and_id_only() {
        let pool: Vec<_> = (0..50)
            .map(|i| Arc::new(Rir::from_taps(vec![1.0 + i as f64], 16000).unwrap()))
            .collect();
        let a = CorruptionSpec::reverb(pool.clone(), 11, "r");
        let b = CorruptionSpec::reverb(pool, 11, "r");
        for id in ["u1", "u2", "u3"] {
            assert_eq!(a.rir_choice(id), b.rir_choice(id));
        }
        assert_eq!(CorruptionSpec::reverb(vec![], 1, "r").rir_choice("x"), None);
    }

    proptest::proptest! {
        #[test]
        fn convolution_is_linear(seed in 0u64..500) {
            let a = noise(300, seed);
            let b = noise(300, seed + 1000);
            let h = noise(40, seed + 2000);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = fft_convolve(&sum, &h);
            let ra = fft_convolve(&a, &h);
            let rb = fft_convolve(&b, &h);
            for i in 0..lhs.len() {
                proptest::prop_assert!((lhs[i] - ra[i] - rb[i]).abs() < 1e-9);
            }
        }
    }
}
