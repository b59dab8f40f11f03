use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Fhvae, FhvaeConfig, Noise, Segment, SegmentMode, Z2Prior, segment_stream};
use crate::autodiff::{adam_step, Graph, OptimizerState};
use crate::models::Standardizer;
use crate::sigproc::{FeatureKind, FeatureMatrix};
use crate::util::rng_for;
use crate::{Error, Result};

const EXTRACT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct FhvaeUtterance {
    pub id: String,
    pub features: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhvaeEpoch {
    pub epoch: usize,
    /// Mean per-segment training loss.
    pub train_loss: f64,
    /// Per-segment dev lower bound (higher is better).
    pub dev_elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhvaeLog {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
    pub epochs: Vec<FhvaeEpoch>,
    pub best_epoch: usize,
}

fn training_segments(utts: &[FhvaeUtterance], len: usize) -> Vec<Vec<Segment>> {
    utts.iter()
        .map(|u| segment_stream(&u.features, &u.id, len, SegmentMode::Training))
        .collect()
}

/// Dev bound: each utterance's prior mean is the posterior mode of `mu2`
/// given its segments' `z2` means; the identity term is left out.
fn dev_elbo(model: &Fhvae<f32>, dev: &[Vec<Segment>], noise_seed: u64) -> Result<f64> {
    let c = &model.config;
    let mut rng = rng_for(noise_seed, &[0xde7]);
    let (mut total, mut n) = (0.0, 0usize);
    for segs in dev.iter().filter(|s| !s.is_empty()) {
        let enc = model.encode(segs)?;
        let k = segs.len() as f64;
        let mode = enc.mu2.sum_axis(Axis(0)) / (k + c.var_z2 / c.var_mu2) as f32;
        let means = mode.insert_axis(Axis(0)).broadcast((segs.len(), c.z2_dim)).unwrap().to_owned();
        let steps = model.batch_inputs(segs)?;
        let noise = Noise::sample(segs.len(), c, &mut rng);
        let mut g = Graph::new(&model.params);
        let (_, parts) = model.batch_loss(&mut g, &steps, &Z2Prior::Fixed(means), &noise)?;
        total += parts.loss * k;
        n += segs.len();
    }
    Ok(-total / n as f64)
}

/// Trains on pooled utterances with Adam and early stopping on the dev bound.
/// Returns the best-dev model with z1 normalization fitted on the training set.
pub fn train_fhvae(
    train: &[FhvaeUtterance],
    dev: &[FhvaeUtterance],
    config: &FhvaeConfig,
) -> Result<(Fhvae<f32>, FhvaeLog)> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::data("<manifest>", "FHVAE needs non-empty train and dev sets"));
    }
    for u in train.iter().chain(dev) {
        if u.features.ncols() != config.input_dim {
            return Err(Error::data(&u.id, format!("{} dims, expected {}", u.features.ncols(), config.input_dim)));
        }
    }
    let mut order: Vec<&FhvaeUtterance> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let sorted: Vec<FhvaeUtterance> = order.into_iter().cloned().collect();
    let per_utt = training_segments(&sorted, config.segment_frames);
    let counts: Vec<usize> = per_utt.iter().map(Vec::len).collect();
    let mut segments: Vec<(usize, Segment)> = per_utt
        .into_iter()
        .enumerate()
        .flat_map(|(i, segs)| segs.into_iter().map(move |s| (i, s)))
        .collect();
    if segments.is_empty() {
        return Err(Error::data("<manifest>", "no training utterance has a full segment"));
    }
    let dev_segs = training_segments(dev, config.segment_frames);
    if dev_segs.iter().all(Vec::is_empty) {
        return Err(Error::data("<manifest>", "no dev utterance has a full segment"));
    }

    let ids = sorted.iter().map(|u| u.id.clone()).collect();
    let mut model = Fhvae::<f32>::new(config.clone(), ids, counts, config.seed)?;
    model.input_norm = Standardizer::fit(sorted.iter().map(|u| &u.features))?;
    let mut state = OptimizerState::<f32>::adam(config.learning_rate, config.clip_norm, config.adam);
    let mut rng = rng_for(config.seed, &[0xf4a]);
    let mut log = FhvaeLog {
        beta1: config.adam.beta1,
        beta2: config.adam.beta2,
        eps: config.adam.eps,
        learning_rate: config.learning_rate,
        epochs: Vec::new(),
        best_epoch: 0,
    };
    log::info!(
        "fhvae: adam beta1={} beta2={} eps={} lr={}",
        log.beta1, log.beta2, log.eps, log.learning_rate
    );
    let mut best: Option<(f64, crate::autodiff::ParamStore<f32>)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        segments.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in segments.chunks(config.batch_size) {
            let segs: Vec<Segment> = chunk.iter().map(|(_, s)| s.clone()).collect();
            let idx: Vec<usize> = chunk.iter().map(|(i, _)| *i).collect();
            let steps = model.batch_inputs(&segs)?;
            let noise = Noise::sample(segs.len(), config, &mut rng);
            let mut g = Graph::new(&model.params);
            let (loss, parts) = model.batch_loss(&mut g, &steps, &Z2Prior::Table(&idx), &noise)?;
            total += parts.loss * segs.len() as f64;
            let grads = g.backward(loss)?;
            model.params.zero_grads();
            model.params.accumulate(&grads);
            adam_step(&mut model.params, &mut state)?;
        }
        let dev_score = dev_elbo(&model, &dev_segs, config.seed)?;
        log.epochs.push(FhvaeEpoch {
            epoch,
            train_loss: total / segments.len() as f64,
            dev_elbo: dev_score,
        });
        log::debug!("fhvae epoch {epoch}: dev elbo {dev_score:.3}");
        if best.as_ref().is_none_or(|(b, _)| dev_score > *b) {
            best = Some((dev_score, model.params.clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params.copy_values_from(&params);
    }
    model.params.zero_grads();
    let raw: Vec<Array2<f32>> = sorted
        .iter()
        .map(|u| raw_z1(&model, &u.features))
        .collect::<Result<_>>()?;
    model.z1_norm = Some(Standardizer::fit(raw.iter())?);
    Ok((model, log))
}

/// Unnormalized `[mu1, logvar1]` per frame from centered, edge-replicated segments.
pub(crate) fn raw_z1(model: &Fhvae<f32>, frames: &Array2<f32>) -> Result<Array2<f32>> {
    let segs = segment_stream(frames, "", model.config.segment_frames, SegmentMode::Extraction);
    if segs.is_empty() {
        return Err(Error::EmptyInput("zero frames".into()));
    }
    let mut parts = Vec::new();
    for chunk in segs.chunks(EXTRACT_CHUNK) {
        let enc = model.encode(chunk)?;
        parts.push(concatenate![Axis(1), enc.mu1, enc.logvar1]);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("matching widths"))
}

/// Per-frame normalized `mu1` (optionally with `logvar1`) features.
pub fn extract_z1(model: &Fhvae<f32>, features: &FeatureMatrix, include_logvar: bool) -> Result<FeatureMatrix> {
    let norm = model
        .z1_norm
        .as_ref()
        .ok_or_else(|| Error::State("FHVAE has no z1 normalization statistics".into()))?;
    if features.dim() != model.config.input_dim {
        return Err(Error::shape(
            "extract_z1",
            format!("features have {} dims, model expects {}", features.dim(), model.config.input_dim),
        ));
    }
    let z = norm.apply::<f32>(&raw_z1(model, &features.frames)?);
    let d1 = model.config.z1_dim;
    let (frames, kind) = if include_logvar {
        (z, FeatureKind::Z1MeanLogvar)
    } else {
        (z.slice(s![.., ..d1]).to_owned(), FeatureKind::Z1Mean)
    };
    FeatureMatrix::new(frames, features.frame_shift, kind, features.source_id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, t: usize, dim: usize) -> Vec<FhvaeUtterance> {
        (0..n)
            .map(|u| FhvaeUtterance {
                id: format!("utt{u}"),
                features: Array2::from_shape_fn((t, dim), |(i, j)| {
                    (u as f32 - 1.5) + ((i as f32 * 0.5 + j as f32).sin()) * 0.7
                }),
            })
            .collect()
    }

    fn small(max_epochs: usize) -> FhvaeConfig {
        FhvaeConfig {
            input_dim: 4,
            lstm_units: 8,
            z1_dim: 3,
            z2_dim: 3,
            batch_size: 8,
            max_epochs,
            seed: 3,
            ..FhvaeConfig::default()
        }
    }

    #[test]
    fn train_elbo_improves_and_logs_adam() {
        let data = toy(4, 100, 4);
        let (_, log) = train_fhvae(&data, &data, &small(10)).unwrap();
        assert_eq!((log.beta1, log.beta2, log.eps, log.learning_rate), (0.95, 0.999, 1e-8, 1e-3));
        let first = log.epochs[0].train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn returns_best_dev_epoch() {
        let data = toy(4, 60, 4);
        let (m, log) = train_fhvae(&data, &data, &small(6)).unwrap();
        let best = log.epochs.iter().map(|e| e.dev_elbo).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(log.epochs[log.best_epoch - 1].dev_elbo, best);
        // The restored parameters reproduce the best dev score.
        let dev = training_segments(&data, 20);
        assert_eq!(dev_elbo(&m, &dev, m.config.seed).unwrap(), best);
    }

    #[test]
    fn extraction_shapes_norm_and_determinism() {
        let data = toy(4, 60, 4);
        let (m, _) = train_fhvae(&data, &data, &small(2)).unwrap();
        let mut all = Vec::new();
        for u in &data {
            let f = FeatureMatrix::new(u.features.clone(), 0.01, FeatureKind::LogMel, &u.id);
            assert!(f.is_err());
            let f = FeatureMatrix {
                frames: u.features.clone(),
                frame_shift: 0.01,
                kind: FeatureKind::LogMel,
                source_id: u.id.clone(),
            };
            let z = extract_z1(&m, &f, false).unwrap();
            assert_eq!(z.frames.dim(), (60, 3));
            let zl = extract_z1(&m, &f, true).unwrap();
            assert_eq!(zl.frames.ncols(), 6);
            assert_eq!(extract_z1(&m, &f, true).unwrap(), zl);
            all.push(zl.frames);
        }
        let stacked = concatenate(Axis(0), &all.iter().map(|a| a.view()).collect::<Vec<_>>()).unwrap();
        for col in stacked.columns() {
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-3, "{mean}");
        }
        let short = FeatureMatrix {
            frames: Array2::ones((1, 4)),
            frame_shift: 0.01,
            kind: FeatureKind::LogMel,
            source_id: "s".into(),
        };
        assert_eq!(extract_z1(&m, &short, false).unwrap().frames.nrows(), 1);
    }

    #[test]
    fn missing_normalizer_is_state_error() {
        let m = Fhvae::<f32>::new(small(1), vec!["a".into()], vec![1], 0).unwrap();
        let f = FeatureMatrix {
            frames: Array2::ones((5, 4)),
            frame_shift: 0.01,
            kind: FeatureKind::LogMel,
            source_id: "s".into(),
        };
        assert!(matches!(extract_z1(&m, &f, false), Err(Error::State(_))));
    }

    #[test]
    fn empty_train_is_data_error() {
        assert!(matches!(train_fhvae(&[], &toy(1, 40, 4), &small(1)), Err(Error::Data { .. })));
    }
}
