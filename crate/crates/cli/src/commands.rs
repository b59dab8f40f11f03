use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use reverbkit::augment::{generate, CorruptionSpec};
use reverbkit::checkpoint::Checkpoint;
use reverbkit::fhvae::{extract_z1, train_fhvae, Fhvae, FhvaeConfig, FhvaeUtterance};
use reverbkit::harness::{
    make_distant, run_grid, synth_corpus, ChannelSpec, CorpusParams, ExperimentConfig, MetricsReport, Split,
};
use reverbkit::labels::read_labels;
use reverbkit::manifest::{Manifest, ManifestEntry};
use reverbkit::models::{
    classify_frames, enhance, frame_error_rate, train_acoustic_model, train_enhancer, AmTrainConfig,
    EnhancerTrainConfig, FeaturePair, OutputKind, Schedule, Tdnn, TdnnConfig, Utterance,
};
use reverbkit::roomsim::{generate_pool, read_rir, sample_rooms, t60, write_rir, RirOptions};
use reverbkit::sigproc::{logmel, read_wav, write_feat, FeatureKind, FeatureMatrix, LogMelConfig};
use reverbkit::{Error, Result};

use crate::{Cli, Command, RirCommand};

const FRAME_SHIFT: f64 = 0.01;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Rir { action } => rir(cli, action),
        Command::Augment(a) => augment(cli, a),
        Command::Features(a) => features(a),
        Command::Synth(a) => synth(cli, a),
        Command::TrainAm(a) => train_am(cli, a),
        Command::TrainEnhance(a) => train_enhance(cli, a),
        Command::TrainFhvae(a) => train_fhvae_cmd(cli, a),
        Command::ExtractZ1(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(cli, a),
        Command::Report(a) => report(a),
    }
}

/// Extra fields for the error line: the subcommand and any path involved.
pub fn context(cli: &Cli, err: &Error) -> serde_json::Value {
    let name = match &cli.command {
        Command::Rir { .. } => "rir",
        Command::Augment(_) => "augment",
        Command::Features(_) => "features",
        Command::Synth(_) => "synth",
        Command::TrainAm(_) => "train-am",
        Command::TrainEnhance(_) => "train-enhance",
        Command::TrainFhvae(_) => "train-fhvae",
        Command::ExtractZ1(_) => "extract-z1",
        Command::Eval(_) => "eval",
        Command::Grid(_) => "grid",
        Command::Report(_) => "report",
    };
    let mut ctx = serde_json::json!({ "subcommand": name });
    match err {
        Error::Io { path, .. } | Error::Format { path, .. } | Error::Unsupported { path, .. } => {
            ctx["path"] = path.display().to_string().into();
        }
        Error::Data { utterance, .. } => ctx["utterance"] = utterance.clone().into(),
        _ => {}
    }
    ctx
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(io(path))
}

fn logmel_of(entry: &ManifestEntry) -> Result<FeatureMatrix> {
    let clip = read_wav(&entry.audio).map_err(|e| Error::data(&entry.id, e.to_string()))?;
    logmel(&clip, &LogMelConfig::default()).map(|f| FeatureMatrix {
        source_id: entry.id.clone(),
        ..f
    })
}

fn load_fhvae(path: &Path) -> Result<Fhvae<f32>> {
    Fhvae::from_checkpoint(&Checkpoint::load(path)?)
}

fn load_tdnn(path: &Path) -> Result<Tdnn<f32>> {
    Tdnn::from_checkpoint(&Checkpoint::load(path)?)
}

/// Log-Mel features, or z1 features when an FHVAE is given, per manifest entry.
fn manifest_features(m: &Manifest, z1: Option<(&Fhvae<f32>, bool)>) -> Result<Vec<FeatureMatrix>> {
    m.entries()
        .iter()
        .map(|e| {
            let f = logmel_of(e)?;
            match z1 {
                Some((model, logvar)) => extract_z1(model, &f, logvar),
                None => Ok(f),
            }
        })
        .collect()
}

fn supervised(paths: &[PathBuf], z1: Option<(&Fhvae<f32>, bool)>) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for p in paths {
        let m = Manifest::read(p)?;
        for (e, f) in m.entries().iter().zip(manifest_features(&m, z1)?) {
            out.push(Utterance {
                id: format!("{}/{}", e.domain, e.id),
                features: f.frames,
                labels: read_labels(&e.labels, &e.id)?,
            });
        }
    }
    Ok(out)
}

fn rir(cli: &Cli, action: &RirCommand) -> Result<()> {
    match action {
        RirCommand::Sample {
            set,
            rooms,
            per_room,
            duration,
            max_order,
            placement,
            out,
        } => {
            let specs = sample_rooms(*set, *rooms, *per_room, cli.seed())?;
            let options = RirOptions {
                duration_s: *duration,
                max_order: *max_order,
                placement: *placement,
            };
            let pool = generate_pool(&specs, &options)?;
            std::fs::create_dir_all(out).map_err(io(out))?;
            for (i, r) in pool.iter().enumerate() {
                write_rir(out, &format!("{set:?}-r{:04}-p{:03}", i / per_room, i % per_room), r)?;
            }
            log::info!("wrote {} responses to {}", pool.len(), out.display());
            Ok(())
        }
        RirCommand::T60 { rir } => {
            let r = read_rir(rir)?;
            println!("{}", serde_json::json!({"rir": rir, "t60_s": t60(&r)?}));
            Ok(())
        }
    }
}

fn read_pool(dir: &Path) -> Result<Vec<Arc<reverbkit::roomsim::Rir>>> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::EmptyInput(format!("no RIR WAV files in {}", dir.display())));
    }
    wavs.iter().map(|w| read_rir(w).map(Arc::new)).collect()
}

fn augment(cli: &Cli, a: &crate::AugmentArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let spec = CorruptionSpec {
        snr_db: a.snr_db,
        gain_db: a.gain_db,
        keep_gain: a.keep_gain,
        ..CorruptionSpec::reverb(read_pool(&a.rir_dir)?, cli.seed(), a.domain.clone())
    };
    let out = generate(&manifest, &spec, &a.out)?;
    log::info!("wrote {} utterances to {}", out.len(), a.out.display());
    Ok(())
}

fn features(a: &crate::FeaturesArgs) -> Result<()> {
    if let Some(wav) = &a.input.wav {
        let clip = read_wav(wav)?;
        let f = logmel(&clip, &LogMelConfig::default())?;
        return write_feat(&a.out, &f.frames);
    }
    let path = a.input.manifest.as_ref().expect("clap enforces one input");
    let m = Manifest::read(path)?;
    let feats = manifest_features(&m, None)?;
    write_feature_dir(&a.out, &m, &feats, FeatureKind::LogMel)
}

fn write_feature_dir(dir: &Path, m: &Manifest, feats: &[FeatureMatrix], kind: FeatureKind) -> Result<()> {
    for f in feats {
        write_feat(dir.join(format!("{}.feat", f.source_id)), &f.frames)?;
    }
    write_json(
        &dir.join("features.json"),
        &serde_json::json!({
            "kind": kind,
            "frame_shift": FRAME_SHIFT,
            "utterances": m.ids().collect::<Vec<_>>(),
        }),
    )
}

fn synth(cli: &Cli, a: &crate::SynthArgs) -> Result<()> {
    let params = CorpusParams {
        n_train: a.n_train,
        n_dev: a.n_dev,
        n_test: a.n_test,
        frames_per_utt: a.frames,
        n_classes: a.classes,
        ..CorpusParams::default()
    };
    let corpus = synth_corpus(&params, cli.seed(), &a.out)?;
    if a.distant {
        let channel = ChannelSpec::default();
        let pool = channel.rir_pool()?;
        for split in Split::ALL {
            let dir = a.out.join("distant").join(split.as_str());
            make_distant(corpus.split(split), &pool, &channel, &dir)?;
        }
    }
    Ok(())
}

fn schedule(n_domains: usize, phase1: usize, phase2: usize) -> Schedule {
    let base = if n_domains > 1 {
        Schedule::multi_domain()
    } else {
        Schedule::single_domain()
    };
    Schedule {
        phase1_epochs: phase1,
        phase2_epochs: phase2,
        ..base
    }
}

fn train_am(cli: &Cli, a: &crate::TrainAmArgs) -> Result<()> {
    let fh = a.z1.fhvae.as_deref().map(load_fhvae).transpose()?;
    let z1 = fh.as_ref().map(|m| (m, a.z1.logvar));
    let train = supervised(&a.train, z1)?;
    let dev = supervised(&a.dev, z1)?;
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyInput("training manifests hold no utterances".into()))?;
    let labels = train.iter().flat_map(|u| u.labels.iter()).max().map_or(0, |m| m + 1);
    let mut model = TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: labels.max(2) }, a.hidden);
    model.input_dim = first.features.ncols();
    let config = AmTrainConfig {
        model,
        schedule: schedule(a.train.len(), a.phase1_epochs, a.phase2_epochs),
        seed: cli.seed(),
    };
    let (am, log) = train_acoustic_model(&train, &dev, &config)?;
    am.to_checkpoint().save(a.out.join("am.ckpt"))?;
    write_json(&a.out.join("am_log.json"), &log)
}

fn pairs(noisy: &Path, clean: &Path) -> Result<Vec<FeaturePair>> {
    let (nm, cm) = (Manifest::read(noisy)?, Manifest::read(clean)?);
    let targets: HashMap<String, Array2<f32>> = cm
        .entries()
        .iter()
        .map(|e| Ok((e.id.clone(), logmel_of(e)?.frames)))
        .collect::<Result<_>>()?;
    nm.entries()
        .iter()
        .map(|e| {
            let target = targets
                .get(&e.id)
                .ok_or_else(|| Error::data(&e.id, format!("no clean partner in {}", clean.display())))?;
            Ok(FeaturePair {
                id: e.id.clone(),
                input: logmel_of(e)?.frames,
                target: target.clone(),
            })
        })
        .collect()
}

fn train_enhance(cli: &Cli, a: &crate::TrainEnhanceArgs) -> Result<()> {
    let parallel = pairs(&a.noisy, &a.clean)?;
    let identity: Vec<FeaturePair> = Manifest::read(&a.clean)?
        .entries()
        .iter()
        .map(|e| Ok(FeaturePair::identity(format!("identity/{}", e.id), logmel_of(e)?.frames)))
        .collect::<Result<_>>()?;
    let dev = pairs(&a.dev_noisy, &a.dev_clean)?;
    let config = EnhancerTrainConfig {
        model: TdnnConfig::with_hidden(OutputKind::Linear { dim: 80 }, a.hidden),
        schedule: schedule(2, a.phase1_epochs, a.phase2_epochs),
        seed: cli.seed(),
    };
    let (model, log) = train_enhancer(&parallel, &identity, &dev, &config)?;
    model.to_checkpoint().save(a.out.join("enhancer.ckpt"))?;
    write_json(&a.out.join("enhancer_log.json"), &log)
}

fn fhvae_utterances(paths: &[PathBuf]) -> Result<Vec<FhvaeUtterance>> {
    let mut out = Vec::new();
    for p in paths {
        let m = Manifest::read(p)?;
        for e in m.entries() {
            out.push(FhvaeUtterance {
                id: format!("{}/{}", e.domain, e.id),
                features: logmel_of(e)?.frames,
            });
        }
    }
    Ok(out)
}

fn train_fhvae_cmd(cli: &Cli, a: &crate::TrainFhvaeArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str::<FhvaeConfig>(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => FhvaeConfig::default(),
    };
    config.seed = cli.seed();
    if let Some(n) = a.max_epochs {
        config.max_epochs = n;
    }
    let train = fhvae_utterances(&a.train)?;
    let dev = fhvae_utterances(&a.dev)?;
    let (model, log) = train_fhvae(&train, &dev, &config)?;
    model.save(&a.out)?;
    write_json(&a.out.join("fhvae_log.json"), &log)
}

fn extract(a: &crate::ExtractZ1Args) -> Result<()> {
    let model = load_fhvae(&a.model)?;
    let m = Manifest::read(&a.manifest)?;
    let feats = manifest_features(&m, Some((&model, a.logvar)))?;
    let kind = if a.logvar {
        FeatureKind::Z1MeanLogvar
    } else {
        FeatureKind::Z1Mean
    };
    write_feature_dir(&a.out, &m, &feats, kind)
}

fn eval(a: &crate::EvalArgs) -> Result<()> {
    let am = load_tdnn(&a.model)?;
    let enhancer = a.enhancer.as_deref().map(load_tdnn).transpose()?;
    let fh = a.z1.fhvae.as_deref().map(load_fhvae).transpose()?;
    let m = Manifest::read(&a.manifest)?;
    let feats = manifest_features(&m, fh.as_ref().map(|f| (f, a.z1.logvar)))?;
    let (mut hyp, mut reference) = (Vec::new(), Vec::new());
    for (e, mut f) in m.entries().iter().zip(feats) {
        if let Some(en) = &enhancer {
            f = enhance(&f, en)?;
        }
        hyp.extend(classify_frames(&f, &am)?.labels);
        reference.extend(read_labels(&e.labels, &e.id)?);
    }
    let result = serde_json::json!({
        "manifest": a.manifest,
        "frames": reference.len(),
        "fer": frame_error_rate(&hyp, &reference)?,
    });
    println!("{result}");
    match &a.out {
        Some(p) => write_json(p, &result),
        None => Ok(()),
    }
}

fn grid(cli: &Cli, a: &crate::GridArgs) -> Result<()> {
    let mut config = ExperimentConfig::read(&a.config)?;
    if let Some(out) = &a.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    config.parallel |= a.parallel;
    let report = run_grid(&config)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(a: &crate::ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.metrics).map_err(io(&a.metrics))?;
    let report = MetricsReport::from_json(&text, &a.metrics)?;
    for p in report.write(&a.out, &a.format)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
