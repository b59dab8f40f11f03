use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{infer, OutputKind, Standardizer, Tdnn, TdnnConfig};
use crate::autodiff::{sgd_step, Graph, OptimizerState, Var};
use crate::util::rng_for;
use crate::{Error, Result};

/// Lower bound on the per-dimension input scale, in log-energy units.
pub const INPUT_STD_FLOOR: f64 = 1.0;

/// Frame-labelled features for acoustic-model training.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
}

/// Frame-aligned input/target features for enhancer training.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub id: String,
    pub input: Array2<f32>,
    pub target: Array2<f32>,
}

impl FeaturePair {
    pub fn identity(id: impl Into<String>, features: Array2<f32>) -> Self {
        Self {
            id: id.into(),
            input: features.clone(),
            target: features,
        }
    }
}

/// Two-phase SGD schedule: a fixed step for `phase1_epochs`, then restart from
/// the best phase-1 epoch and decay the step by `decay` every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub initial_step: f64,
    pub decay: f64,
    pub clip_norm: f64,
}

impl Schedule {
    pub fn single_domain() -> Self {
        Self {
            phase1_epochs: 20,
            phase2_epochs: 5,
            initial_step: 0.025,
            decay: 0.75,
            clip_norm: 5.0,
        }
    }

    pub fn multi_domain() -> Self {
        Self {
            initial_step: 0.01,
            ..Self::single_domain()
        }
    }

    /// Step size of phase-2 epoch `n` (1-based).
    pub fn phase2_step(&self, n: usize) -> f64 {
        self.initial_step * self.decay.powi(n as i32)
    }

    fn validate(&self) -> Result<()> {
        if self.phase1_epochs == 0 {
            return Err(Error::Argument("phase 1 needs at least one epoch".into()));
        }
        if !(self.initial_step > 0.0 && self.decay > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Argument("step size, decay and clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmTrainConfig {
    pub model: TdnnConfig,
    pub schedule: Schedule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancerTrainConfig {
    pub model: TdnnConfig,
    pub schedule: Schedule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based across both phases.
    pub epoch: usize,
    pub phase: u8,
    pub step_size: f64,
    /// Mean per-utterance training loss.
    pub train_loss: f64,
    /// Dev frame error rate (%) for classifiers, dev MSE for enhancers.
    pub dev_score: f64,
    pub max_grad_norm: f64,
    pub max_applied_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub objective: String,
    pub dev_metric: String,
    pub epochs: Vec<EpochLog>,
    /// Phase-1 epoch that phase 2 restarted from.
    pub best_phase1_epoch: usize,
}

impl TrainLog {
    pub fn step_sizes(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.step_size).collect()
    }
}

struct Example {
    input: Array2<f32>,
    target: Target,
}

enum Target {
    Labels(Vec<usize>),
    Frames(Array2<f32>),
}

fn example_loss(g: &mut Graph<'_, f32>, model: &Tdnn<f32>, ex: &Example) -> Result<Var> {
    let x = g.input(ex.input.clone())?;
    let y = model.forward(g, x)?;
    match &ex.target {
        Target::Labels(l) => g.softmax_cross_entropy(y, l),
        Target::Frames(t) => {
            let t = g.input(t.clone())?;
            g.mse(y, t)
        }
    }
}

/// Shared two-phase loop. `dev` scores a model; lower is better.
fn run_schedule(
    model: &mut Tdnn<f32>,
    examples: &[Example],
    schedule: &Schedule,
    seed: u64,
    mut dev: impl FnMut(&Tdnn<f32>) -> Result<f64>,
) -> Result<(Vec<EpochLog>, usize)> {
    schedule.validate()?;
    let mut rng = rng_for(seed, &[0x5348_5546]);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut state = OptimizerState::<f32>::sgd(schedule.initial_step, Some(schedule.clip_norm));
    let mut log = Vec::new();

    let mut epoch = |model: &mut Tdnn<f32>, step: f64, phase: u8, log: &mut Vec<EpochLog>| -> Result<f64> {
        state.step_size = step;
        order.shuffle(&mut rng);
        let (mut total, mut max_grad, mut max_applied) = (0.0, 0.0f64, 0.0f64);
        for &i in &order {
            let mut g = Graph::new(&model.params);
            let loss = example_loss(&mut g, model, &examples[i])?;
            total += g.scalar(loss) as f64;
            let grads = g.backward(loss)?;
            model.params.zero_grads();
            model.params.accumulate(&grads);
            let report = sgd_step(&mut model.params, &mut state)?;
            max_grad = max_grad.max(report.grad_norm);
            max_applied = max_applied.max(report.applied_norm);
        }
        let score = dev(model)?;
        log.push(EpochLog {
            epoch: log.len() + 1,
            phase,
            step_size: step,
            train_loss: total / examples.len() as f64,
            dev_score: score,
            max_grad_norm: max_grad,
            max_applied_norm: max_applied,
        });
        Ok(score)
    };

    let mut best: Option<(f64, usize, crate::autodiff::ParamStore<f32>)> = None;
    for e in 1..=schedule.phase1_epochs {
        let score = epoch(model, schedule.initial_step, 1, &mut log)?;
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, e, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("phase 1 ran");
    model.params.copy_values_from(&params);
    for n in 1..=schedule.phase2_epochs {
        epoch(model, schedule.phase2_step(n), 2, &mut log)?;
    }
    Ok((log, best_epoch))
}

fn check_width(id: &str, m: &Array2<f32>, dim: usize) -> Result<()> {
    if m.ncols() != dim {
        return Err(Error::data(id, format!("features have {} dims, model expects {dim}", m.ncols())));
    }
    if m.nrows() == 0 {
        return Err(Error::data(id, "zero frames"));
    }
    Ok(())
}

fn check_utterances(utts: &[Utterance], cfg: &TdnnConfig) -> Result<usize> {
    let OutputKind::Softmax { n_labels } = cfg.output else {
        return Err(Error::Argument("acoustic model needs a softmax output".into()));
    };
    for u in utts {
        check_width(&u.id, &u.features, cfg.input_dim)?;
        if u.labels.len() != u.features.nrows() {
            return Err(Error::data(
                &u.id,
                format!("{} labels for {} frames", u.labels.len(), u.features.nrows()),
            ));
        }
        if let Some(l) = u.labels.iter().find(|&&l| l >= n_labels) {
            return Err(Error::data(&u.id, format!("label {l} outside [0, {n_labels})")));
        }
    }
    Ok(n_labels)
}

/// Cross-entropy TDNN training with dev-FER model selection.
pub fn train_acoustic_model(
    train: &[Utterance],
    dev: &[Utterance],
    config: &AmTrainConfig,
) -> Result<(Tdnn<f32>, TrainLog)> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyInput("acoustic model needs train and dev utterances".into()));
    }
    check_utterances(train, &config.model)?;
    check_utterances(dev, &config.model)?;
    let mut model = Tdnn::<f32>::new(config.model.clone(), config.seed)?;
    model.input_norm = Standardizer::fit(train.iter().map(|u| &u.features))?.with_std_floor(INPUT_STD_FLOOR);
    let examples: Vec<Example> = train
        .iter()
        .map(|u| Example {
            input: model.input_norm.apply(&u.features),
            target: Target::Labels(u.labels.clone()),
        })
        .collect();
    let (epochs, best) = run_schedule(&mut model, &examples, &config.schedule, config.seed, |m| {
        let (mut wrong, mut total) = (0usize, 0usize);
        for u in dev {
            let c = infer::classify_array(m, &u.features)?;
            wrong += c.labels.iter().zip(&u.labels).filter(|(a, b)| a != b).count();
            total += u.labels.len();
        }
        Ok(100.0 * wrong as f64 / total as f64)
    })?;
    log::info!("acoustic model: best phase-1 epoch {best}");
    Ok((
        model,
        TrainLog {
            objective: "cross_entropy".into(),
            dev_metric: "fer".into(),
            epochs,
            best_phase1_epoch: best,
        },
    ))
}

/// MSE feature-mapping TDNN over parallel and identity pairs, shuffled together.
pub fn train_enhancer(
    parallel: &[FeaturePair],
    identity: &[FeaturePair],
    dev: &[FeaturePair],
    config: &EnhancerTrainConfig,
) -> Result<(Tdnn<f32>, TrainLog)> {
    let OutputKind::Linear { dim } = config.model.output else {
        return Err(Error::Argument("enhancer needs a linear output".into()));
    };
    let train: Vec<&FeaturePair> = parallel.iter().chain(identity).collect();
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyInput("enhancer needs train and dev pairs".into()));
    }
    for p in train.iter().copied().chain(dev) {
        check_width(&p.id, &p.input, config.model.input_dim)?;
        check_width(&p.id, &p.target, dim)?;
        if p.input.nrows() != p.target.nrows() {
            return Err(Error::data(
                &p.id,
                format!("pair lengths differ: {} vs {} frames", p.input.nrows(), p.target.nrows()),
            ));
        }
    }
    let mut model = Tdnn::<f32>::new(config.model.clone(), config.seed)?;
    model.input_norm = Standardizer::fit(train.iter().map(|p| &p.input))?.with_std_floor(INPUT_STD_FLOOR);
    let out_norm = Standardizer::fit(train.iter().map(|p| &p.target))?;
    let examples: Vec<Example> = train
        .iter()
        .map(|p| Example {
            input: model.input_norm.apply(&p.input),
            target: Target::Frames(out_norm.apply(&p.target)),
        })
        .collect();
    let dev_targets: Vec<Array2<f32>> = dev.iter().map(|p| out_norm.apply(&p.target)).collect();
    model.output_norm = Some(out_norm);
    let (epochs, best) = run_schedule(&mut model, &examples, &config.schedule, config.seed, |m| {
        let (mut sq, mut n) = (0.0f64, 0usize);
        for (p, t) in dev.iter().zip(&dev_targets) {
            let y: Array2<f32> = m.infer(&p.input)?;
            sq += (&y - t).iter().map(|d| (*d as f64).powi(2)).sum::<f64>();
            n += t.len();
        }
        Ok(sq / n as f64)
    })?;
    log::info!("enhancer: best phase-1 epoch {best}");
    Ok((
        model,
        TrainLog {
            objective: "mse".into(),
            dev_metric: "mse".into(),
            epochs,
            best_phase1_epoch: best,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy_utts() -> Vec<Utterance> {
        (0..2)
            .map(|u| {
                let labels: Vec<usize> = (0..30).map(|t| (t / 5 + u) % 3).collect();
                let features = Array2::from_shape_fn((30, 6), |(t, j)| {
                    let l = labels[t];
                    if j % 3 == l { 1.0 } else { 0.1 * ((t * 7 + j) % 5) as f32 }
                });
                Utterance {
                    id: format!("u{u}"),
                    features,
                    labels,
                }
            })
            .collect()
    }

    fn toy_config(p1: usize, p2: usize) -> AmTrainConfig {
        let mut model = TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: 3 }, 8);
        model.input_dim = 6;
        AmTrainConfig {
            model,
            schedule: Schedule {
                phase1_epochs: p1,
                phase2_epochs: p2,
                ..Schedule::single_domain()
            },
            seed: 11,
        }
    }

    #[test]
    fn toy_loss_decreases_over_first_epochs() {
        let utts = toy_utts();
        let (_, log) = train_acoustic_model(&utts, &utts, &toy_config(5, 0)).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn schedule_steps_and_selection() {
        let utts = toy_utts();
        let (_, log) = train_acoustic_model(&utts, &utts, &toy_config(4, 3)).unwrap();
        let expect: Vec<f64> = (0..7)
            .map(|e| if e < 4 { 0.025 } else { 0.025 * 0.75f64.powi(e - 3) })
            .collect();
        assert_eq!(log.step_sizes(), expect);
        for (got, lit) in log.step_sizes()[4..].iter().zip([0.01875, 0.0140625, 0.010546875]) {
            assert!((got - lit).abs() < 1e-15);
        }
        let p1: Vec<f64> = log.epochs[..4].iter().map(|e| e.dev_score).collect();
        let min = p1.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = p1.iter().position(|&s| s == min).unwrap() + 1;
        assert_eq!(log.best_phase1_epoch, first);
        assert!(log.epochs.iter().all(|e| e.max_applied_norm <= 5.0 + 1e-9));
    }

    #[test]
    fn deterministic_under_seed() {
        let utts = toy_utts();
        let a = train_acoustic_model(&utts, &utts, &toy_config(2, 1)).unwrap();
        let b = train_acoustic_model(&utts, &utts, &toy_config(2, 1)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn label_length_mismatch_names_utterance() {
        let mut utts = toy_utts();
        utts[1].labels.pop();
        let err = train_acoustic_model(&utts, &utts, &toy_config(1, 0)).unwrap_err();
        assert!(err.to_string().contains("u1"), "{err}");
    }

    fn enhancer_config(dim: usize, p1: usize) -> EnhancerTrainConfig {
        let mut model = TdnnConfig::with_hidden(OutputKind::Linear { dim }, 16);
        model.input_dim = dim;
        EnhancerTrainConfig {
            model,
            schedule: Schedule {
                phase1_epochs: p1,
                phase2_epochs: 2,
                ..Schedule::multi_domain()
            },
            seed: 5,
        }
    }

    fn smooth_signal(seed: usize, t: usize, dim: usize) -> Array2<f32> {
        Array2::from_shape_fn((t, dim), |(i, j)| {
            ((i as f32 * 0.3 + j as f32 * 0.7 + seed as f32).sin() + 0.5 * (i as f32 * 0.11 * (j + 1) as f32).cos())
                as f32
        })
    }

    #[test]
    fn identity_training_reduces_mse_tenfold() {
        let dim = 4;
        let pairs: Vec<FeaturePair> = (0..4)
            .map(|s| FeaturePair::identity(format!("i{s}"), smooth_signal(s, 60, dim)))
            .collect();
        let untrained = {
            let mut cfg = enhancer_config(dim, 1);
            cfg.schedule.initial_step = 1e-12;
            cfg.schedule.phase2_epochs = 0;
            train_enhancer(&[], &pairs, &pairs, &cfg).unwrap().1.epochs[0].dev_score
        };
        let (_, log) = train_enhancer(&[], &pairs, &pairs, &enhancer_config(dim, 30)).unwrap();
        let trained = log.epochs.last().unwrap().dev_score;
        assert!(trained * 10.0 < untrained, "{trained} vs {untrained}");
    }

    #[test]
    fn unequal_pair_lengths_rejected() {
        let p = FeaturePair {
            id: "bad".into(),
            input: Array2::zeros((10, 4)),
            target: Array2::zeros((9, 4)),
        };
        let err = train_enhancer(&[p.clone()], &[], &[p], &enhancer_config(4, 1)).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }
}
