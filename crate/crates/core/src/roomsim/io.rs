use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Placement, Rir, RirMeta, RoomSpec};
use crate::sigproc::{read_wav, write_wav, AudioClip};
use crate::util::{read_to_string, write_file};
use crate::{Error, Result};

/// JSON sidecar stored next to each RIR WAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRecord {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub reflection: f64,
    pub seed: u64,
    pub max_order: usize,
    pub duration_s: f64,
    pub placement: Placement,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
}

impl RirRecord {
    fn from_meta(meta: &RirMeta) -> Self {
        Self {
            dims: meta.spec.dims,
            source: meta.spec.source,
            mic: meta.spec.mic,
            reflection: meta.spec.reflection,
            seed: meta.spec.seed,
            max_order: meta.max_order,
            duration_s: meta.duration_s,
            placement: meta.placement,
            speed_of_sound: meta.spec.speed_of_sound,
            sample_rate: meta.spec.sample_rate,
        }
    }

    fn into_meta(self) -> RirMeta {
        RirMeta {
            spec: RoomSpec {
                dims: self.dims,
                source: self.source,
                mic: self.mic,
                reflection: self.reflection,
                speed_of_sound: self.speed_of_sound,
                sample_rate: self.sample_rate,
                seed: self.seed,
            },
            max_order: self.max_order,
            duration_s: self.duration_s,
            placement: self.placement,
        }
    }
}

fn sidecar(wav: &Path) -> PathBuf {
    wav.with_extension("json")
}

/// Writes `dir/name.wav` (float32) and, when metadata exists, `dir/name.json`.
/// Returns the WAV path.
pub fn write_rir(dir: &Path, name: &str, rir: &Rir) -> Result<PathBuf> {
    let wav = dir.join(format!("{name}.wav"));
    let clip = AudioClip::new(
        name,
        rir.taps.iter().map(|&t| t as f32).collect(),
        rir.sample_rate,
    )?;
    write_wav(&clip, &wav)?;
    if let Some(meta) = &rir.meta {
        let json = serde_json::to_string_pretty(&RirRecord::from_meta(meta))
            .expect("record serializes");
        write_file(&sidecar(&wav), json.as_bytes())?;
    }
    Ok(wav)
}

/// Reads a RIR WAV and its sidecar, if present.
pub fn read_rir(wav: &Path) -> Result<Rir> {
    let clip = read_wav(wav)?;
    let taps: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    let mut rir = Rir::from_taps(taps, clip.sample_rate)?;
    let side = sidecar(wav);
    if side.exists() {
        let record: RirRecord = serde_json::from_str(&read_to_string(&side)?)
            .map_err(|e| Error::format(&side, e.to_string()))?;
        rir.meta = Some(record.into_meta());
    }
    Ok(rir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roomsim::image_method;

    #[test]
    fn persisted_rir_keeps_metadata() {
        let spec = RoomSpec::new([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], 0.4);
        let rir = image_method(&spec, 0.3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let wav = write_rir(dir.path(), "r0", &rir).unwrap();
        let back = read_rir(&wav).unwrap();
        assert_eq!(back.meta, rir.meta);
        assert_eq!(back.taps.len(), rir.taps.len());
        for (a, b) in back.taps.iter().zip(&rir.taps) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r0.json")).unwrap())
                .unwrap();
        for key in ["dims", "source", "mic", "reflection", "seed", "max_order"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
