use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rayon::prelude::*;

use super::corpus::{jitter_labels, label_path, make_distant, synth_corpus, Split, SynthCorpus};
use super::report::{MetricsReport, ReportFormat};
use super::{ArmSpec, Domain, ExperimentConfig, ModelKind};
use crate::augment::{generate, CorruptionSpec};
use crate::fhvae::{extract_z1, train_fhvae, Fhvae, FhvaeUtterance};
use crate::labels::{read_labels, write_labels};
use crate::manifest::{Manifest, ManifestEntry};
use crate::models::{
    classify_frames, enhance, frame_error_rate, train_acoustic_model, train_enhancer, AmTrainConfig,
    EnhancerTrainConfig, FeaturePair, OutputKind, Schedule, Tdnn, TdnnConfig, Utterance,
};
use crate::roomsim::{generate_pool, sample_rooms, RirOptions};
use crate::sigproc::{logmel, read_wav, FeatureKind, FeatureMatrix, LogMelConfig};
use crate::util::{derive_seed, hash_str, write_file};
use crate::{Error, Result};

/// Why a label file was opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAccess {
    Training,
    Evaluation,
}

/// Records every label file the grid opens. Training reads of test labels
/// are refused before the file is touched.
#[derive(Debug, Default)]
pub struct LabelAudit {
    log: Mutex<Vec<(LabelAccess, Split, PathBuf)>>,
}

impl LabelAudit {
    pub fn entries(&self) -> Vec<(LabelAccess, Split, PathBuf)> {
        self.log.lock().unwrap().clone()
    }

    fn read(&self, access: LabelAccess, split: Split, entry: &ManifestEntry) -> Result<Vec<usize>> {
        if access == LabelAccess::Training && split == Split::Test {
            return Err(Error::State(format!("training asked for test labels of {}", entry.id)));
        }
        self.log.lock().unwrap().push((access, split, entry.labels.clone()));
        read_labels(&entry.labels, &entry.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Audio {
    Clean,
    Distant,
    Reverb,
}

fn audio_of(d: Domain) -> Audio {
    match d {
        Domain::Clean => Audio::Clean,
        Domain::Distant | Domain::DistantCleanLabels => Audio::Distant,
        Domain::Reverb => Audio::Reverb,
    }
}

type Feats = Arc<Vec<(String, Array2<f32>)>>;

fn features_of(m: &Manifest) -> Result<Feats> {
    let cfg = LogMelConfig::default();
    let v: Result<Vec<_>> = m
        .entries()
        .par_iter()
        .map(|e| {
            let clip = read_wav(&e.audio).map_err(|err| Error::data(&e.id, err.to_string()))?;
            Ok((e.id.clone(), logmel(&clip, &cfg)?.frames))
        })
        .collect();
    Ok(Arc::new(v?))
}

/// Seed-independent data: corpus, far-field copy, jittered labels, log-mel features.
struct Shared {
    clean: SynthCorpus,
    jittered: HashMap<Split, Manifest>,
    feats: HashMap<(Audio, Split), Feats>,
}

fn prepare_shared(cfg: &ExperimentConfig) -> Result<Shared> {
    let root = cfg.output_dir.join("corpus");
    let clean = synth_corpus(&cfg.corpus, cfg.corpus_seed, &root)?;
    let pool = cfg.channel.rir_pool()?;
    let mut jittered = HashMap::new();
    let mut feats = HashMap::new();
    for split in Split::ALL {
        let m = clean.split(split);
        let d = make_distant(m, &pool, &cfg.channel, &root.join("distant").join(split.as_str()))?;
        if split != Split::Test {
            let mut entries = Vec::new();
            for e in d.entries() {
                let labels = read_labels(&e.labels, &e.id)?;
                let j = jitter_labels(&labels, cfg.training.label_jitter, derive_seed(cfg.corpus_seed, &[hash_str(&e.id)]));
                let path = label_path(&root, "labels-jitter", split, &e.id);
                write_labels(&path, &e.id, &j)?;
                entries.push(ManifestEntry {
                    labels: path,
                    ..e.clone()
                });
            }
            jittered.insert(split, Manifest::new(entries)?);
        }
        feats.insert((Audio::Clean, split), features_of(m)?);
        feats.insert((Audio::Distant, split), features_of(&d)?);
    }
    Ok(Shared {
        clean,
        jittered,
        feats,
    })
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    shared: &'a Shared,
    audit: &'a LabelAudit,
    seed: u64,
    reverb: HashMap<Split, Vec<ManifestEntry>>,
    feats: HashMap<(Audio, Split), Feats>,
    z1: HashMap<(Audio, Split, FeatureKind), Feats>,
    ams: HashMap<String, Arc<Tdnn<f32>>>,
    enhancers: HashMap<ModelKind, Arc<Tdnn<f32>>>,
    fhvae: Option<Arc<Fhvae<f32>>>,
}

impl<'a> SeedRun<'a> {
    fn new(cfg: &'a ExperimentConfig, shared: &'a Shared, audit: &'a LabelAudit, seed: u64) -> Self {
        Self {
            cfg,
            shared,
            audit,
            seed,
            reverb: HashMap::new(),
            feats: shared.feats.clone(),
            z1: HashMap::new(),
            ams: HashMap::new(),
            enhancers: HashMap::new(),
            fhvae: None,
        }
    }

    fn seed_dir(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name).join(self.seed.to_string())
    }

    fn ensure_reverb(&mut self) -> Result<()> {
        if !self.reverb.is_empty() {
            return Ok(());
        }
        let aug = &self.cfg.augmentation;
        let mut specs = Vec::new();
        for &set in &aug.room_sets {
            specs.extend(sample_rooms(set, aug.rooms_per_set, aug.rirs_per_room, self.seed)?);
        }
        let pool: Vec<_> = generate_pool(&specs, &RirOptions::default())?.into_iter().map(Arc::new).collect();
        let dir = self.seed_dir("augment");
        for split in Split::ALL {
            let copies = if split == Split::Train { aug.copies.max(1) } else { 1 };
            let mut feats = Vec::new();
            let mut entries = Vec::new();
            for k in 0..copies {
                let seed = if k == 0 { self.seed } else { derive_seed(self.seed, &[k as u64]) };
                let spec = CorruptionSpec::reverb(pool.clone(), seed, "reverb");
                let sub = if k == 0 { split.as_str().to_string() } else { format!("{}-{k}", split.as_str()) };
                let m = generate(self.shared.clean.split(split), &spec, &dir.join(sub))?;
                feats.extend(features_of(&m)?.iter().cloned());
                entries.extend(m.entries().iter().cloned());
            }
            self.feats.insert((Audio::Reverb, split), Arc::new(feats));
            self.reverb.insert(split, entries);
        }
        Ok(())
    }

    fn logmel(&mut self, audio: Audio, split: Split) -> Result<Feats> {
        if audio == Audio::Reverb {
            self.ensure_reverb()?;
        }
        Ok(self.feats[&(audio, split)].clone())
    }

    /// Label manifest for a domain's split. Test references are always the clean stream.
    fn label_manifest(&self, domain: Domain, split: Split) -> &Manifest {
        match (domain, split) {
            (Domain::Distant, Split::Train | Split::Dev) => &self.shared.jittered[&split],
            _ => self.shared.clean.split(split),
        }
    }

    fn labels(&self, domain: Domain, split: Split, access: LabelAccess) -> Result<Vec<Vec<usize>>> {
        let entries = match (domain, self.reverb.get(&split)) {
            (Domain::Reverb, Some(r)) => r.as_slice(),
            _ => self.label_manifest(domain, split).entries(),
        };
        entries.iter().map(|e| self.audit.read(access, split, e)).collect()
    }

    fn fhvae(&mut self) -> Result<Arc<Fhvae<f32>>> {
        if let Some(m) = &self.fhvae {
            return Ok(m.clone());
        }
        let pooled = |s: &Self, split: Split| -> Vec<FhvaeUtterance> {
            [Audio::Clean, Audio::Distant]
                .iter()
                .flat_map(|a| {
                    let tag = if *a == Audio::Clean { "clean" } else { "distant" };
                    s.feats[&(*a, split)].iter().map(move |(id, f)| FhvaeUtterance {
                        id: format!("{tag}/{id}"),
                        features: f.clone(),
                    })
                })
                .collect()
        };
        let (train, dev) = (pooled(self, Split::Train), pooled(self, Split::Dev));
        let config = crate::fhvae::FhvaeConfig {
            seed: derive_seed(self.seed, &[0xfa]),
            ..self.cfg.fhvae.clone()
        };
        let (model, log) = train_fhvae(&train, &dev, &config)?;
        let dir = self.seed_dir("fhvae");
        model.save(&dir)?;
        write_file(&dir.join("fhvae_log.json"), serde_json::to_string_pretty(&log).unwrap().as_bytes())?;
        let m = Arc::new(model);
        self.fhvae = Some(m.clone());
        Ok(m)
    }

    fn features(&mut self, audio: Audio, split: Split, kind: FeatureKind) -> Result<Feats> {
        if kind == FeatureKind::LogMel {
            return self.logmel(audio, split);
        }
        if let Some(f) = self.z1.get(&(audio, split, kind)) {
            return Ok(f.clone());
        }
        let model = self.fhvae()?;
        let raw = self.logmel(audio, split)?;
        let z: Result<Vec<_>> = raw
            .par_iter()
            .map(|(id, f)| {
                let fm = FeatureMatrix::new(f.clone(), 0.01, FeatureKind::LogMel, id.clone())?;
                Ok((id.clone(), extract_z1(&model, &fm, kind == FeatureKind::Z1MeanLogvar)?.frames))
            })
            .collect();
        let z = Arc::new(z?);
        self.z1.insert((audio, split, kind), z.clone());
        Ok(z)
    }

    fn supervised(&mut self, domains: &[Domain], split: Split, kind: FeatureKind) -> Result<Vec<Utterance>> {
        let mut out = Vec::new();
        for &d in domains {
            let feats = self.features(audio_of(d), split, kind)?;
            let labels = self.labels(d, split, LabelAccess::Training)?;
            for ((id, f), l) in feats.iter().zip(labels) {
                out.push(Utterance {
                    id: format!("{}/{id}", d.as_str()),
                    features: f.clone(),
                    labels: l,
                });
            }
        }
        Ok(out)
    }

    fn acoustic_model(&mut self, arm: &ArmSpec, dir: &Path) -> Result<Arc<Tdnn<f32>>> {
        let key = format!(
            "{}|{}",
            arm.train.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("+"),
            arm.features.as_str()
        );
        if let Some(m) = self.ams.get(&key) {
            return Ok(m.clone());
        }
        let train = self.supervised(&arm.train, Split::Train, arm.features)?;
        let dev = self.supervised(&arm.train, Split::Dev, arm.features)?;
        let t = &self.cfg.training;
        let mut model = TdnnConfig::with_hidden(
            OutputKind::Softmax {
                n_labels: self.cfg.corpus.n_classes,
            },
            t.hidden_units,
        );
        model.input_dim = train[0].features.ncols();
        let base = if arm.train.len() == 1 {
            Schedule::single_domain()
        } else {
            Schedule::multi_domain()
        };
        let config = AmTrainConfig {
            model,
            schedule: Schedule {
                phase1_epochs: t.phase1_epochs,
                phase2_epochs: t.phase2_epochs,
                ..base
            },
            seed: derive_seed(self.seed, &[hash_str(&key)]),
        };
        let (am, log) = train_acoustic_model(&train, &dev, &config)?;
        am.to_checkpoint().save(dir.join("am.ckpt"))?;
        write_file(&dir.join("am_log.json"), serde_json::to_string_pretty(&log).unwrap().as_bytes())?;
        let am = Arc::new(am);
        self.ams.insert(key, am.clone());
        Ok(am)
    }

    fn pairs(&mut self, noisy: Audio, split: Split) -> Result<Vec<FeaturePair>> {
        let input = self.logmel(noisy, split)?;
        let target: HashMap<&str, &Array2<f32>> = self
            .shared
            .feats[&(Audio::Clean, split)]
            .iter()
            .map(|(id, f)| (id.as_str(), f))
            .collect();
        input
            .iter()
            .map(|(id, x)| {
                let y = target
                    .get(id.as_str())
                    .ok_or_else(|| Error::data(id, "no clean partner"))?;
                Ok(FeaturePair {
                    id: id.clone(),
                    input: x.clone(),
                    target: (*y).clone(),
                })
            })
            .collect()
    }

    fn enhancer(&mut self, kind: ModelKind) -> Result<Arc<Tdnn<f32>>> {
        if let Some(m) = self.enhancers.get(&kind) {
            return Ok(m.clone());
        }
        let (noisy, name) = match kind {
            ModelKind::Enhanced => (Audio::Distant, "enhancer-parallel"),
            ModelKind::Dereverberated => (Audio::Reverb, "enhancer-dereverb"),
            ModelKind::Tdnn => unreachable!("plain TDNN arms need no enhancer"),
        };
        let parallel = self.pairs(noisy, Split::Train)?;
        let identity: Vec<FeaturePair> = self
            .logmel(Audio::Clean, Split::Train)?
            .iter()
            .map(|(id, f)| FeaturePair::identity(format!("identity/{id}"), f.clone()))
            .collect();
        let dev = self.pairs(noisy, Split::Dev)?;
        let t = &self.cfg.training;
        let config = EnhancerTrainConfig {
            model: TdnnConfig::with_hidden(OutputKind::Linear { dim: 80 }, t.enhancer_hidden_units),
            schedule: Schedule {
                phase1_epochs: t.phase1_epochs,
                phase2_epochs: t.phase2_epochs,
                ..Schedule::multi_domain()
            },
            seed: derive_seed(self.seed, &[hash_str(name)]),
        };
        let (model, log) = train_enhancer(&parallel, &identity, &dev, &config)?;
        let dir = self.seed_dir(name);
        model.to_checkpoint().save(dir.join("enhancer.ckpt"))?;
        write_file(&dir.join("enhancer_log.json"), serde_json::to_string_pretty(&log).unwrap().as_bytes())?;
        let m = Arc::new(model);
        self.enhancers.insert(kind, m.clone());
        Ok(m)
    }

    fn evaluate(&mut self, arm: &ArmSpec, am: &Tdnn<f32>, test: Domain) -> Result<f64> {
        let feats = self.features(audio_of(test), Split::Test, arm.features)?;
        let enhancer = match arm.model {
            ModelKind::Tdnn => None,
            k => Some(self.enhancer(k)?),
        };
        let refs = self.labels(Domain::Clean, Split::Test, LabelAccess::Evaluation)?;
        let (mut hyp, mut reference) = (Vec::new(), Vec::new());
        for ((id, f), r) in feats.iter().zip(refs) {
            let mut fm = FeatureMatrix::new(f.clone(), 0.01, arm.features, id.clone())?;
            if let Some(e) = &enhancer {
                fm = enhance(&fm, e)?;
            }
            hyp.extend(classify_frames(&fm, am)?.labels);
            reference.extend(r);
        }
        frame_error_rate(&hyp, &reference)
    }

    fn run_arm(&mut self, arm: &ArmSpec) -> Result<Vec<(String, f64)>> {
        let slug = match arm.model {
            ModelKind::Tdnn => arm.name.clone(),
            ModelKind::Enhanced => format!("{}.enhanced", arm.name),
            ModelKind::Dereverberated => format!("{}.dereverberated", arm.name),
        };
        let dir = self.seed_dir(&slug);
        let am = self.acoustic_model(arm, &dir)?;
        let mut out = Vec::new();
        for &t in &arm.test {
            out.push((arm.target_name(t), self.evaluate(arm, &am, t)?));
        }
        let metrics: Vec<_> = out
            .iter()
            .map(|(t, v)| serde_json::json!({"train": arm.name, "target": t, "fer": v}))
            .collect();
        write_file(
            &dir.join("metrics.json"),
            serde_json::to_string_pretty(&serde_json::json!({"seed": self.seed, "cells": metrics}))
                .unwrap()
                .as_bytes(),
        )?;
        Ok(out)
    }
}

type ArmResults = Vec<std::result::Result<Vec<(String, f64)>, String>>;

fn run_seed(cfg: &ExperimentConfig, shared: &Shared, audit: &LabelAudit, seed: u64) -> ArmResults {
    let mut run = SeedRun::new(cfg, shared, audit, seed);
    cfg.arms
        .iter()
        .map(|arm| {
            let r = run.run_arm(arm);
            match &r {
                Ok(cells) => log::info!("seed {seed} arm {}: {cells:?}", arm.name),
                Err(e) => log::warn!("seed {seed} arm {} failed: {e}", arm.name),
            }
            r.map_err(|e| e.to_string())
        })
        .collect()
}

/// Runs every arm for every seed and writes `report.{csv,svg,txt}` and
/// `metrics.json` under the output directory. A failing arm is reported as
/// failed; the rest of the grid still runs.
pub fn run_grid(config: &ExperimentConfig) -> Result<MetricsReport> {
    run_grid_audited(config, &LabelAudit::default())
}

pub fn run_grid_audited(config: &ExperimentConfig, audit: &LabelAudit) -> Result<MetricsReport> {
    config.validate()?;
    write_file(&config.output_dir.join("config.json"), config.to_json().as_bytes())?;
    let shared = prepare_shared(config)?;
    let per_seed: Vec<ArmResults> = if config.parallel {
        config.seeds.par_iter().map(|&s| run_seed(config, &shared, audit, s)).collect()
    } else {
        config.seeds.iter().map(|&s| run_seed(config, &shared, audit, s)).collect()
    };
    let mut report = MetricsReport::default();
    for (seed, results) in config.seeds.iter().zip(per_seed) {
        for (arm, res) in config.arms.iter().zip(results) {
            match res {
                Ok(cells) => {
                    for (target, fer) in cells {
                        report.record(&arm.group, &arm.name, &target, *seed, Ok(fer));
                    }
                }
                Err(e) => {
                    for &t in &arm.test {
                        report.record(&arm.group, &arm.name, &arm.target_name(t), *seed, Err(e.clone()));
                    }
                }
            }
        }
    }
    write_file(&config.output_dir.join("metrics.json"), report.to_json().as_bytes())?;
    report.write(&config.output_dir, &ReportFormat::ALL)?;
    Ok(report)
}
