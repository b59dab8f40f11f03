//! Finite-difference gradient cases shared by the gradient-check suite and
//! the acceptance report.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reverbkit::autodiff::{lstm_sequence, Graph, LstmParams, ParamStore, Var};
use reverbkit::fhvae::{Fhvae, FhvaeConfig, Noise, Segment, Z2Prior};
use reverbkit::models::{OutputKind, Tdnn, TdnnConfig};
use reverbkit::Result;

use super::{away_from_zero, max_rel_error, rng, uniform};

pub const INSTANCES: u64 = 5;

/// A named check: maps an instance seed to the worst relative error.
pub struct Case {
    pub name: &'static str,
    pub run: Box<dyn Fn(u64) -> f64>,
}

fn case(name: &'static str, run: impl Fn(u64) -> f64 + 'static) -> Case {
    Case {
        name,
        run: Box::new(run),
    }
}

/// Reduces any matrix node to a scalar through a fixed random weighting, so
/// every output entry gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(y);
    let w = g.input(uniform(&mut rng(seed + 1000), r, c, 1.0))?;
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

fn unary(
    name: &'static str,
    init: impl Fn(&mut ChaCha8Rng) -> Array2<f64> + 'static,
    op: fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
) -> Case {
    case(name, move |seed| {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", init(&mut r));
        max_rel_error(&store, |g| {
            let a = g.param(a);
            let y = op(g, a)?;
            weighted_sum(g, y, seed)
        })
    })
}

fn binary(
    name: &'static str,
    shapes: impl Fn(&mut ChaCha8Rng) -> ((usize, usize), (usize, usize)) + 'static,
    op: fn(&mut Graph<'_, f64>, Var, Var) -> Result<Var>,
) -> Case {
    case(name, move |seed| {
        let mut r = rng(seed);
        let (sa, sb) = shapes(&mut r);
        let mut store = ParamStore::new();
        let a = store.add("a", uniform(&mut r, sa.0, sa.1, 1.0));
        let b = store.add("b", uniform(&mut r, sb.0, sb.1, 1.0));
        max_rel_error(&store, |g| {
            let (a, b) = (g.param(a), g.param(b));
            let y = op(g, a, b)?;
            weighted_sum(g, y, seed)
        })
    })
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.random_range(1..5), r.random_range(1..5))
}

pub fn elementwise() -> Vec<Case> {
    vec![
        binary(
            "add",
            |r| {
                let d = dims(r);
                (d, d)
            },
            |g, a, b| g.add(a, b),
        ),
        binary(
            "sub",
            |r| {
                let d = dims(r);
                (d, d)
            },
            |g, a, b| g.sub(a, b),
        ),
        binary(
            "mul",
            |r| {
                let d = dims(r);
                (d, d)
            },
            |g, a, b| g.mul(a, b),
        ),
        unary("scale", |r| uniform(r, 3, 4, 1.0), |g, a| g.scale(a, -1.7)),
        unary("relu", |r| away_from_zero(r, 3, 5), |g, a| g.relu(a)),
        unary("sigmoid", |r| uniform(r, 4, 3, 3.0), |g, a| g.sigmoid(a)),
        unary("tanh", |r| uniform(r, 4, 3, 2.0), |g, a| g.tanh(a)),
        unary("exp", |r| uniform(r, 2, 5, 1.5), |g, a| g.exp(a)),
        unary("sum", |r| uniform(r, 3, 3, 1.0), |g, a| g.sum(a)),
    ]
}

pub fn linear_algebra() -> Vec<Case> {
    vec![
        binary(
            "matmul",
            |r| {
                let (m, k) = dims(r);
                ((m, k), (k, r.random_range(1..5)))
            },
            |g, a, b| g.matmul(a, b),
        ),
        binary(
            "sq_dist_rows",
            |r| {
                let (b, d) = dims(r);
                ((b, d), (r.random_range(1..5), d))
            },
            |g, a, b| g.sq_dist_rows(a, b),
        ),
        case("affine", |seed| {
            let mut r = rng(seed);
            let (t, d, h) = (r.random_range(1..6), r.random_range(1..5), r.random_range(1..5));
            let mut store = ParamStore::new();
            let x = store.add("x", uniform(&mut r, t, d, 1.0));
            let w = store.add("w", uniform(&mut r, d, h, 1.0));
            let b = store.add("b", uniform(&mut r, 1, h, 1.0));
            max_rel_error(&store, |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.affine(x, w, b)?;
                weighted_sum(g, y, seed)
            })
        }),
    ]
}

pub fn structural() -> Vec<Case> {
    vec![
        unary("slice_cols", |r| uniform(r, 3, 6, 1.0), |g, a| g.slice_cols(a, 1, 4)),
        unary("slice_rows", |r| uniform(r, 6, 2, 1.0), |g, a| g.slice_rows(a, 2, 5)),
        unary("repeat_rows", |r| uniform(r, 1, 4, 1.0), |g, a| g.repeat_rows(a, 5)),
        unary(
            "context_sum",
            |r| uniform(r, 7, 3, 1.0),
            |g, a| g.context_sum(a, &[-3, 0, 3]),
        ),
        unary(
            "context_sum_short",
            |r| uniform(r, 2, 3, 1.0),
            |g, a| g.context_sum(a, &[-1, 0, 1]),
        ),
        binary(
            "concat",
            |r| {
                let (t, d) = dims(r);
                ((t, d), (t, r.random_range(1..4)))
            },
            |g, a, b| g.concat(&[a, b]),
        ),
        case("gather_rows", |seed| {
            let mut r = rng(seed);
            let mut store = ParamStore::new();
            let t = store.add("t", uniform(&mut r, 4, 3, 1.0));
            let idx: Vec<usize> = (0..6).map(|_| r.random_range(0..4)).collect();
            max_rel_error(&store, |g| {
                let t = g.param(t);
                let y = g.gather_rows(t, &idx)?;
                weighted_sum(g, y, seed)
            })
        }),
    ]
}

pub fn losses() -> Vec<Case> {
    vec![
        case("softmax_cross_entropy", |seed| {
            let mut r = rng(seed);
            let (t, k) = (r.random_range(1..6), r.random_range(2..6));
            let labels: Vec<usize> = (0..t).map(|_| r.random_range(0..k)).collect();
            let mut store = ParamStore::new();
            let z = store.add("z", uniform(&mut r, t, k, 2.0));
            max_rel_error(&store, |g| {
                let z = g.param(z);
                g.softmax_cross_entropy(z, &labels)
            })
        }),
        binary(
            "mse",
            |r| {
                let d = dims(r);
                (d, d)
            },
            |g, a, b| g.mse(a, b),
        ),
        case("gaussian_nll", |seed| {
            let mut r = rng(seed);
            let (t, d) = dims(&mut r);
            let mut store = ParamStore::new();
            let ids: Vec<_> = ["x", "m", "l"]
                .iter()
                .map(|n| store.add(*n, uniform(&mut r, t, d, 1.0)))
                .collect();
            max_rel_error(&store, |g| {
                let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
                g.gaussian_nll(v[0], v[1], v[2])
            })
        }),
        case("kl_diag_gaussians", |seed| {
            let mut r = rng(seed);
            let (t, d) = dims(&mut r);
            let mut store = ParamStore::new();
            let ids: Vec<_> = ["mq", "lq", "mp", "lp"]
                .iter()
                .map(|n| store.add(*n, uniform(&mut r, t, d, 1.0)))
                .collect();
            max_rel_error(&store, |g| {
                let v: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
                g.kl_diag_gaussians(v[0], v[1], v[2], v[3])
            })
        }),
    ]
}

pub fn lstm() -> Vec<Case> {
    vec![case("lstm", |seed| {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let p = LstmParams::new(&mut store, "lstm", 3, 4, &mut r);
        let xs: Vec<Array2<f64>> = (0..5).map(|_| uniform(&mut r, 2, 3, 1.0)).collect();
        let x0 = store.add("x0", uniform(&mut r, 2, 3, 1.0));
        max_rel_error(&store, |g| {
            let mut inputs = vec![g.param(x0)];
            for x in &xs[1..] {
                inputs.push(g.input(x.clone())?);
            }
            let hs = lstm_sequence(g, &inputs, &p)?;
            let mut total = weighted_sum(g, hs[0], seed)?;
            for (k, &h) in hs.iter().enumerate().skip(1) {
                let s = weighted_sum(g, h, seed + 10 * k as u64)?;
                total = g.add(total, s)?;
            }
            Ok(total)
        })
    })]
}

pub fn tdnn() -> Vec<Case> {
    vec![case("tdnn", |seed| {
        let mut r = rng(seed);
        let mut cfg = TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: 3 }, 4);
        cfg.input_dim = 3;
        let model = Tdnn::<f64>::new(cfg, seed).unwrap();
        let t = r.random_range(1..15);
        let x = uniform(&mut r, t, 3, 1.0);
        let labels: Vec<usize> = (0..t).map(|_| r.random_range(0..3)).collect();
        max_rel_error(&model.params, |g| {
            let xv = g.input(x.clone())?;
            let y = model.forward(g, xv)?;
            g.softmax_cross_entropy(y, &labels)
        })
    })]
}

pub fn fhvae() -> Vec<Case> {
    vec![case("fhvae", |seed| {
        let mut r = rng(seed);
        let cfg = FhvaeConfig {
            input_dim: 3,
            segment_frames: 4,
            lstm_units: 3,
            z1_dim: 2,
            z2_dim: 2,
            ..FhvaeConfig::default()
        };
        let mut model = Fhvae::<f64>::new(cfg.clone(), vec!["a".into(), "b".into()], vec![2, 1], seed).unwrap();
        let table = model.table_id();
        *model.params.value_mut(table) = uniform(&mut r, 2, 2, 0.5);
        let segs: Vec<Segment> = ["a", "a", "b"]
            .iter()
            .map(|u| Segment {
                frames: uniform(&mut r, 4, 3, 1.0).mapv(|v| v as f32),
                utterance_id: u.to_string(),
                position: 0,
            })
            .collect();
        let steps = model.batch_inputs(&segs).unwrap();
        let noise = Noise::<f64>::sample(3, &cfg, &mut r);
        let idx = [0usize, 0, 1];
        max_rel_error(&model.params, |g| {
            model
                .batch_loss(g, &steps, &Z2Prior::Table(&idx), &noise)
                .map(|(l, _)| l)
        })
    })]
}
