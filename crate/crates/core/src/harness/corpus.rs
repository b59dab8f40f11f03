use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::augment::{generate, CorruptionSpec};
use crate::labels::write_labels;
use crate::manifest::{Manifest, ManifestEntry};
use crate::roomsim::{generate_pool, sample_rooms, Rir, RirOptions, RoomSet};
use crate::sigproc::{hz_to_mel, mel_to_hz, write_wav, AudioClip, SAMPLE_RATE};
use crate::util::{hash_str, rng_for};
use crate::{Error, Result};

const HOP: usize = 160;
const WINDOW: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Mean utterance length; actual lengths vary by up to 10%.
    pub frames_per_utt: usize,
    pub n_classes: usize,
    pub min_unit_frames: usize,
    pub max_unit_frames: usize,
    /// Level of a white background floor relative to the utterance power.
    /// `None` leaves stretches outside the unit bands near digital silence.
    pub background_snr_db: Option<f64>,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_dev: 10,
            n_test: 10,
            frames_per_utt: 500,
            n_classes: 8,
            min_unit_frames: 10,
            max_unit_frames: 40,
            background_snr_db: Some(20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Clean manifests, one per split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> &Manifest {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Spectral signature of one unit class: a noise band and a tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSpec {
    pub band_hz: f64,
    pub tone_hz: f64,
}

/// Band centers and tones on two interleaved mel grids, the tone grid shuffled.
pub fn unit_specs(n_classes: usize, seed: u64) -> Vec<UnitSpec> {
    let (lo, hi) = (hz_to_mel(250.0), hz_to_mel(6000.0));
    let grid = |k: usize, offset: f64| mel_to_hz(lo + (hi - lo) * (k as f64 + offset) / n_classes as f64);
    let mut tones: Vec<usize> = (0..n_classes).collect();
    let mut rng = rng_for(seed, &[0x0417]);
    rand::seq::SliceRandom::shuffle(tones.as_mut_slice(), &mut rng);
    (0..n_classes)
        .map(|k| UnitSpec {
            band_hz: grid(k, 0.25),
            tone_hz: grid(tones[k], 0.75),
        })
        .collect()
}

/// Two cascaded constant-peak biquad bandpass sections.
fn bandpass(x: &mut [f64], center_hz: f64, q: f64) {
    let w0 = 2.0 * PI * center_hz / SAMPLE_RATE as f64;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    for _ in 0..2 {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for s in x.iter_mut() {
            let y = b0 * *s + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = *s;
            y2 = y1;
            y1 = y;
            *s = y;
        }
    }
}

/// Audio for `n` samples of unit `spec`.
pub fn unit_audio<R: Rng>(spec: &UnitSpec, n: usize, rng: &mut R) -> Vec<f64> {
    let mut noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    bandpass(&mut noise, spec.band_hz, 4.0);
    let band_gain = 0.15 * 10f64.powf(rng.random_range(-3.0..3.0) / 20.0);
    let tone_gain = 0.05 * 10f64.powf(rng.random_range(-3.0..3.0) / 20.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let w = 2.0 * PI * spec.tone_hz / SAMPLE_RATE as f64;
    noise
        .iter()
        .enumerate()
        .map(|(i, v)| band_gain * v + tone_gain * (w * i as f64 + phase).sin())
        .collect()
}

/// One utterance: audio of `400 + (T-1) 160` samples and `T` frame labels,
/// frame `t` labelled by the unit covering sample `160 t + 200`.
pub fn synth_utterance(id: &str, params: &CorpusParams, units: &[UnitSpec], seed: u64) -> Result<(AudioClip, Vec<usize>)> {
    let mut rng = rng_for(seed, &[hash_str(id)]);
    let spread = params.frames_per_utt / 10;
    let t = params.frames_per_utt - spread + rng.random_range(0..=2 * spread);
    let n = WINDOW + (t - 1) * HOP;
    let mut samples = Vec::with_capacity(n);
    let mut spans = Vec::new();
    while samples.len() < n {
        let class = rng.random_range(0..units.len());
        let frames = rng.random_range(params.min_unit_frames..=params.max_unit_frames);
        let len = (frames * HOP).min(n - samples.len());
        spans.push((samples.len(), samples.len() + len, class));
        samples.extend(unit_audio(&units[class], len, &mut rng));
    }
    if let Some(snr) = params.background_snr_db {
        let power = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        let mut nrng = rng_for(seed, &[hash_str(id), 1]);
        for v in &mut samples {
            *v += sigma * nrng.sample::<f64, _>(StandardNormal);
        }
    }
    let labels = (0..t)
        .map(|f| {
            let c = f * HOP + WINDOW / 2;
            spans.iter().find(|(s, e, _)| c >= *s && c < *e).map(|s| s.2).unwrap()
        })
        .collect();
    let clip = AudioClip::new(id, samples.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE)?;
    Ok((clip, labels))
}

pub fn utterance_id(split: Split, index: usize) -> String {
    format!("{}{index:03}", split.as_str())
}

/// Path of the label file for an utterance of a given labelling.
pub fn label_path(root: &Path, labelling: &str, split: Split, id: &str) -> PathBuf {
    root.join(labelling).join(split.as_str()).join(format!("{id}.lab"))
}

/// Writes `out_dir/clean/{split}/{id}.wav`, `out_dir/labels/{split}/{id}.lab`
/// and one manifest per split. Identical inputs give byte-identical files.
pub fn synth_corpus(params: &CorpusParams, seed: u64, out_dir: &Path) -> Result<SynthCorpus> {
    if params.n_classes < 2 {
        return Err(Error::Argument("need at least two label classes".into()));
    }
    if params.min_unit_frames == 0 || params.min_unit_frames > params.max_unit_frames || params.frames_per_utt < 2 {
        return Err(Error::Argument("invalid unit or utterance length".into()));
    }
    if params.background_snr_db.is_some_and(|s| !s.is_finite()) {
        return Err(Error::Argument("background SNR must be finite".into()));
    }
    let units = unit_specs(params.n_classes, seed);
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Train => params.n_train,
            Split::Dev => params.n_dev,
            Split::Test => params.n_test,
        };
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let id = utterance_id(split, i);
            let (clip, labels) = synth_utterance(&id, params, &units, seed)?;
            let audio = out_dir.join("clean").join(split.as_str()).join(format!("{id}.wav"));
            crate::util::create_dir_all(audio.parent().unwrap())?;
            write_wav(&clip, &audio)?;
            let lab = label_path(out_dir, "labels", split, &id);
            write_labels(&lab, &id, &labels)?;
            entries.push(ManifestEntry {
                id,
                audio,
                domain: "clean".into(),
                labels: lab,
            });
        }
        let m = Manifest::new(entries)?;
        m.write(out_dir.join(format!("clean-{}.jsonl", split.as_str())))?;
        manifests.push(m);
    }
    let test = manifests.pop().unwrap();
    let dev = manifests.pop().unwrap();
    let train = manifests.pop().unwrap();
    Ok(SynthCorpus { train, dev, test })
}

/// Stand-in for the far-field channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub reverb: bool,
    /// Room family and count of the fixed rooms the channel draws from.
    pub room_set: RoomSet,
    pub n_rooms: usize,
    /// Overrides the sampled wall reflection coefficient of every room.
    pub reflection: Option<f64>,
    pub gain_db: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            reverb: true,
            room_set: RoomSet::S2,
            n_rooms: 3,
            reflection: Some(0.7),
            gain_db: -6.0,
            snr_db: Some(15.0),
            seed: 17,
        }
    }
}

impl ChannelSpec {
    pub fn off() -> Self {
        Self {
            reverb: false,
            gain_db: 0.0,
            snr_db: None,
            ..Self::default()
        }
    }

    /// The fixed rooms of this channel, one placement each.
    pub fn rir_pool(&self) -> Result<Vec<Arc<Rir>>> {
        let mut specs = sample_rooms(self.room_set, self.n_rooms, 1, self.seed)?;
        if let Some(beta) = self.reflection {
            for s in &mut specs {
                s.reflection = beta;
            }
        }
        Ok(generate_pool(&specs, &RirOptions::default())?.into_iter().map(Arc::new).collect())
    }

    pub fn corruption(&self, pool: &[Arc<Rir>], domain: &str) -> Result<CorruptionSpec> {
        if self.reverb && pool.is_empty() {
            return Err(Error::Argument("reverberant channel needs a non-empty RIR pool".into()));
        }
        Ok(CorruptionSpec {
            rir_pool: if self.reverb { pool.to_vec() } else { Vec::new() },
            snr_db: self.snr_db,
            gain_db: (self.gain_db != 0.0).then_some(self.gain_db),
            keep_gain: false,
            seed: self.seed,
            domain: domain.into(),
        })
    }
}

/// Passes every clean utterance through the channel. Labels are inherited.
pub fn make_distant(clean: &Manifest, pool: &[Arc<Rir>], channel: &ChannelSpec, out_dir: &Path) -> Result<Manifest> {
    generate(clean, &channel.corruption(pool, "distant")?, out_dir)
}

/// Moves each unit boundary by up to `max_shift` frames, keeping every unit
/// at least one frame long.
pub fn jitter_labels(labels: &[usize], max_shift: usize, seed: u64) -> Vec<usize> {
    if max_shift == 0 || labels.len() < 2 {
        return labels.to_vec();
    }
    let mut bounds: Vec<usize> = (1..labels.len()).filter(|&t| labels[t] != labels[t - 1]).collect();
    let mut rng = rng_for(seed, &[0x717]);
    let m = max_shift as isize;
    for i in 0..bounds.len() {
        let lo = if i == 0 { 1 } else { bounds[i - 1] + 1 };
        let hi = if i + 1 < bounds.len() { bounds[i + 1] - 1 } else { labels.len() - 1 };
        let shifted = bounds[i] as isize + rng.random_range(-(m as i64)..=m as i64) as isize;
        bounds[i] = (shifted.max(lo as isize) as usize).min(hi.max(lo));
    }
    let mut out = Vec::with_capacity(labels.len());
    let mut start = 0;
    let runs: Vec<usize> = std::iter::once(labels[0])
        .chain((1..labels.len()).filter(|&t| labels[t] != labels[t - 1]).map(|t| labels[t]))
        .collect();
    for (k, &b) in bounds.iter().chain(std::iter::once(&labels.len())).enumerate() {
        out.extend(std::iter::repeat_n(runs[k], b - start));
        start = b;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::read_labels;
    use crate::sigproc::{logmel, read_wav, LogMelConfig};

    fn small() -> CorpusParams {
        CorpusParams {
            n_train: 3,
            n_dev: 1,
            n_test: 1,
            frames_per_utt: 120,
            ..CorpusParams::default()
        }
    }

    #[test]
    fn contract_and_determinism() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ca = synth_corpus(&small(), 9, a.path()).unwrap();
        synth_corpus(&small(), 9, b.path()).unwrap();
        assert_eq!(ca.train.len(), 3);
        for e in ca.train.entries().iter().chain(ca.test.entries()) {
            let clip = read_wav(&e.audio).unwrap();
            let labels = read_labels(&e.labels, &e.id).unwrap();
            let feats = logmel(&clip, &LogMelConfig::default()).unwrap();
            assert_eq!(feats.num_frames(), labels.len());
            assert!(labels.iter().all(|&l| l < 8));
            let other = b.path().join(e.audio.strip_prefix(a.path()).unwrap());
            assert_eq!(std::fs::read(&e.audio).unwrap(), std::fs::read(other).unwrap());
        }
    }

    #[test]
    fn rejects_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = CorpusParams { n_classes: 1, ..small() };
        assert!(matches!(synth_corpus(&p, 0, dir.path()), Err(Error::Argument(_))));
    }

    #[test]
    fn units_peak_in_distinct_filters() {
        let units = unit_specs(8, 3);
        let cfg = LogMelConfig::default();
        let mut rng = rng_for(1, &[]);
        let peaks: Vec<usize> = units
            .iter()
            .map(|u| {
                let audio: Vec<f64> = unit_audio(u, 16000, &mut rng);
                let e = crate::sigproc::log_mel_energies(&audio, &cfg).unwrap();
                let mean = e.mean_axis(ndarray::Axis(0)).unwrap();
                (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap()
            })
            .collect();
        let mut sorted = peaks.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), peaks.len(), "{peaks:?}");
    }

    #[test]
    fn jitter_keeps_runs_and_bounds() {
        let labels: Vec<usize> = [0; 12].into_iter().chain([3; 2]).chain([1; 15]).collect();
        for seed in 0..50 {
            let j = jitter_labels(&labels, 2, seed);
            assert_eq!(j.len(), labels.len());
            assert_eq!(j[0], 0);
            assert_eq!(*j.last().unwrap(), 1);
            assert!(j.contains(&3));
            let diff = j.iter().zip(&labels).filter(|(a, b)| a != b).count();
            assert!(diff <= 4);
        }
        assert_eq!(jitter_labels(&labels, 0, 1), labels);
    }

    #[test]
    fn channel_off_is_identity_and_reverb_only_matches_generate() {
        let dir = tempfile::tempdir().unwrap();
        let c = synth_corpus(&small(), 2, &dir.path().join("c")).unwrap();
        let off = make_distant(&c.dev, &[], &ChannelSpec::off(), &dir.path().join("off")).unwrap();
        for (a, b) in c.dev.entries().iter().zip(off.entries()) {
            assert_eq!(read_wav(&a.audio).unwrap().samples, read_wav(&b.audio).unwrap().samples);
            assert_eq!(a.labels, b.labels);
        }
        let ch = ChannelSpec {
            n_rooms: 1,
            room_set: RoomSet::S1,
            ..ChannelSpec::off()
        };
        let ch = ChannelSpec { reverb: true, ..ch };
        let pool = ch.rir_pool().unwrap();
        let d = make_distant(&c.dev, &pool, &ch, &dir.path().join("rev")).unwrap();
        let spec = CorruptionSpec::reverb(pool.clone(), ch.seed, "distant");
        let g = generate(&c.dev, &spec, &dir.path().join("gen")).unwrap();
        for (a, b) in d.entries().iter().zip(g.entries()) {
            assert_eq!(read_wav(&a.audio).unwrap().samples, read_wav(&b.audio).unwrap().samples);
        }
    }
}
