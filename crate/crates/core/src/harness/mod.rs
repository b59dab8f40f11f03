//! Desk-scale experiment harness: a synthetic labelled corpus, a simulated
//! far-field channel, the adaptation grid, and reports.

mod corpus;
mod grid;
mod report;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use corpus::{
    jitter_labels, label_path, make_distant, synth_corpus, synth_utterance, unit_audio, unit_specs, utterance_id,
    ChannelSpec, CorpusParams, Split, SynthCorpus, UnitSpec,
};
pub use grid::{run_grid, run_grid_audited, LabelAccess, LabelAudit};
pub use report::{emit_csv, parse_csv, Cell, CellSummary, MetricsReport, ReportFormat};

use crate::fhvae::FhvaeConfig;
use crate::roomsim::RoomSet;
use crate::sigproc::FeatureKind;
use crate::util::read_to_string;
use crate::{Error, Result};

/// Acoustic condition of a data set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Clean,
    /// Far-field audio with its own (boundary-jittered) training labels.
    Distant,
    /// Far-field audio with the clean-stream labels.
    DistantCleanLabels,
    /// Clean audio convolved with simulated room responses.
    Reverb,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Clean => "clean",
            Domain::Distant => "distant",
            Domain::DistantCleanLabels => "distant-clean-labels",
            Domain::Reverb => "reverb",
        }
    }
}

/// How test features reach the acoustic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tdnn,
    /// Through an enhancer trained on (distant, clean) pairs.
    Enhanced,
    /// Through an enhancer trained on (simulated reverb, clean) pairs.
    Dereverberated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    /// Row label in reports.
    pub name: String,
    /// Report section.
    pub group: String,
    pub train: Vec<Domain>,
    pub test: Vec<Domain>,
    pub features: FeatureKind,
    pub model: ModelKind,
}

impl ArmSpec {
    pub fn new(name: &str, group: &str, train: &[Domain], test: &[Domain]) -> Self {
        Self {
            name: name.into(),
            group: group.into(),
            train: train.to_vec(),
            test: test.to_vec(),
            features: FeatureKind::LogMel,
            model: ModelKind::Tdnn,
        }
    }

    pub fn with_features(mut self, f: FeatureKind) -> Self {
        self.features = f;
        self
    }

    pub fn with_model(mut self, m: ModelKind) -> Self {
        self.model = m;
        self
    }

    /// Column label for a test domain.
    pub fn target_name(&self, test: Domain) -> String {
        match self.model {
            ModelKind::Tdnn => test.as_str().to_string(),
            ModelKind::Enhanced => format!("enhanced-{}", test.as_str()),
            ModelKind::Dereverberated => format!("dereverb-{}", test.as_str()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Argument(format!("arm {} needs train and test domains", self.name)));
        }
        if self.test.contains(&Domain::DistantCleanLabels) {
            return Err(Error::Argument(format!(
                "arm {}: test on `distant`; references are always the clean-stream labels",
                self.name
            )));
        }
        if self.model != ModelKind::Tdnn && self.features != FeatureKind::LogMel {
            return Err(Error::Argument(format!("arm {}: enhancers work on log-mel features", self.name)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Argument(format!("arm name {:?} is not a valid directory name", self.name)));
        }
        Ok(())
    }
}

/// The full adaptation grid.
pub fn default_arms() -> Vec<ArmSpec> {
    use Domain::*;
    vec![
        ArmSpec::new("clean", "domains", &[Clean], &[Clean, Distant]),
        ArmSpec::new("distant", "domains", &[Distant], &[Distant]),
        ArmSpec::new("distant-clean-labels", "domains", &[DistantCleanLabels], &[Distant]),
        ArmSpec::new("clean+distant", "domains", &[Clean, Distant], &[Clean, Distant]),
        ArmSpec::new("clean+reverb", "augmentation", &[Clean, Reverb], &[Reverb, Distant]),
        ArmSpec::new("clean", "enhancement", &[Clean], &[Clean, Distant]).with_model(ModelKind::Enhanced),
        ArmSpec::new("clean", "enhancement", &[Clean], &[Distant]).with_model(ModelKind::Dereverberated),
        ArmSpec::new("clean-z1", "fhvae", &[Clean], &[Clean, Distant]).with_features(FeatureKind::Z1Mean),
        ArmSpec::new("clean-z1-logvar", "fhvae", &[Clean], &[Clean, Distant])
            .with_features(FeatureKind::Z1MeanLogvar),
    ]
}

/// Simulated rooms used for reverberation augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub room_sets: Vec<RoomSet>,
    pub rooms_per_set: usize,
    pub rirs_per_room: usize,
    /// Reverberated copies of each training utterance, each drawn with its own seed.
    pub copies: usize,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            room_sets: RoomSet::ALL.to_vec(),
            rooms_per_set: 10,
            rirs_per_room: 2,
            copies: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    pub hidden_units: usize,
    /// Width of the feature-mapping enhancers.
    pub enhancer_hidden_units: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Boundary jitter (frames) of the far-field domain's own labels.
    pub label_jitter: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            enhancer_hidden_units: 128,
            phase1_epochs: 20,
            phase2_epochs: 5,
            label_jitter: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arms: Vec<ArmSpec>,
    pub seeds: Vec<u64>,
    pub corpus: CorpusParams,
    /// Fixes the corpus and the far-field channel; per-run seeds vary the rest.
    pub corpus_seed: u64,
    pub channel: ChannelSpec,
    pub augmentation: AugmentationSpec,
    pub training: TrainingSpec,
    pub fhvae: FhvaeConfig,
    pub output_dir: PathBuf,
    /// Run seeds concurrently.
    #[serde(default)]
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Desk-scale grid over three seeds.
    pub fn desk(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            arms: default_arms(),
            seeds: vec![1, 2, 3],
            corpus: CorpusParams::default(),
            corpus_seed: 2024,
            channel: ChannelSpec::default(),
            augmentation: AugmentationSpec::default(),
            training: TrainingSpec::default(),
            fhvae: FhvaeConfig {
                segment_frames: 10,
                lstm_units: 128,
                z1_dim: 16,
                z2_dim: 16,
                learning_rate: 3e-3,
                max_epochs: 60,
                patience: 10,
                ..FhvaeConfig::default()
            },
            output_dir: output_dir.into(),
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Argument("experiment has no arms".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("experiment needs at least one seed".into()));
        }
        for a in &self.arms {
            a.validate()?;
        }
        for (i, a) in self.arms.iter().enumerate() {
            for b in &self.arms[..i] {
                for t in &a.test {
                    if a.name == b.name && b.test.iter().any(|u| b.target_name(*u) == a.target_name(*t)) {
                        return Err(Error::Argument(format!(
                            "cell ({}, {}) appears twice",
                            a.name,
                            a.target_name(*t)
                        )));
                    }
                }
            }
        }
        if self.fhvae.input_dim != 80 {
            return Err(Error::Argument("FHVAE input must be 80-dim log-mel".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str, origin: &std::path::Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
