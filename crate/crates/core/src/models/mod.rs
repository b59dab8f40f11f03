//! Time-delay neural networks used as frame classifiers (acoustic models)
//! and as feature-to-feature regressors (enhancers).

mod infer;
mod train;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use infer::{classify_frames, enhance, frame_error_rate, Classification};
pub use train::{
    train_acoustic_model, train_enhancer, AmTrainConfig, EnhancerTrainConfig, EpochLog,
    FeaturePair, Schedule, TrainLog, Utterance,
};

use crate::autodiff::{xavier, xavier_fan, Graph, ParamId, ParamStore, Real, Var};
use crate::checkpoint::Checkpoint;
use crate::{Error, Result};

/// Context triples `[i, 0, k]` of the six context layers.
pub const STANDARD_CONTEXTS: [[isize; 3]; 6] = [
    [-1, 0, 1],
    [-1, 0, 1],
    [-1, 0, 1],
    [-3, 0, 3],
    [-3, 0, 3],
    [-3, 0, 3],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Softmax { n_labels: usize },
    Linear { dim: usize },
}

impl OutputKind {
    pub fn dim(self) -> usize {
        match self {
            OutputKind::Softmax { n_labels } => n_labels,
            OutputKind::Linear { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdnnConfig {
    pub contexts: Vec<[isize; 3]>,
    pub hidden_units: usize,
    pub input_dim: usize,
    pub output: OutputKind,
}

impl TdnnConfig {
    /// Six context layers of 1000 units over 80-dim input.
    pub fn standard(output: OutputKind) -> Self {
        Self::with_hidden(output, 1000)
    }

    pub fn with_hidden(output: OutputKind, hidden_units: usize) -> Self {
        Self {
            contexts: STANDARD_CONTEXTS.to_vec(),
            hidden_units,
            input_dim: 80,
            output,
        }
    }

    /// Frames on either side that can influence one output frame.
    pub fn receptive_radius(&self) -> usize {
        self.contexts
            .iter()
            .map(|c| c.iter().map(|o| o.unsigned_abs()).max().unwrap_or(0))
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.input_dim == 0 || self.output.dim() == 0 {
            return Err(Error::Argument("TDNN dimensions must be positive".into()));
        }
        if self.contexts.iter().any(|c| c[1] != 0) {
            return Err(Error::Argument("context triples must have 0 in the middle".into()));
        }
        Ok(())
    }
}

/// Per-dimension affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over all rows of all matrices. Near-constant dimensions get unit scale.
    pub fn fit<'a, I>(mats: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Array2<f32>>,
    {
        let mut sum: Option<Vec<f64>> = None;
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for m in mats {
            let s = sum.get_or_insert_with(|| {
                sq = vec![0.0; m.ncols()];
                vec![0.0; m.ncols()]
            });
            if m.ncols() != s.len() {
                return Err(Error::shape("standardizer", "feature widths differ"));
            }
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    s[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
            }
            n += m.nrows();
        }
        let sum = sum.ok_or_else(|| Error::EmptyInput("no frames to normalize".into()))?;
        if n == 0 {
            return Err(Error::EmptyInput("no frames to normalize".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Raises every scale to at least `floor`.
    pub fn with_std_floor(mut self, floor: f64) -> Self {
        for s in &mut self.std {
            *s = s.max(floor);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Real>(&self, x: &Array2<f32>) -> Array2<T> {
        let mut out = Array2::zeros(x.raw_dim());
        for (mut orow, irow) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            for j in 0..irow.len() {
                orow[j] = T::lit((irow[j] as f64 - self.mean[j]) / self.std[j]);
            }
        }
        out
    }

    pub fn invert<T: Real>(&self, y: &Array2<T>) -> Array2<f32> {
        let mut out = Array2::zeros(y.raw_dim());
        for (mut orow, irow) in out.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
            for j in 0..irow.len() {
                orow[j] = (irow[j].to_f64().unwrap() * self.std[j] + self.mean[j]) as f32;
            }
        }
        out
    }
}

/// One TDNN layer: `h~_t = W h_t + b`, then `ReLU(h~_{t+i} + h~_t + h~_{t+k})`
/// with out-of-range frames clamped to the edges.
pub fn tdnn_layer<T: Real>(
    g: &mut Graph<'_, T>,
    h_prev: Var,
    w: Var,
    b: Var,
    context: [isize; 3],
) -> Result<Var> {
    let h = g.affine(h_prev, w, b)?;
    let summed = g.context_sum(h, &context)?;
    g.relu(summed)
}

/// Plain-matrix form of [`tdnn_layer`].
pub fn tdnn_layer_forward(
    h_prev: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
    context: [isize; 3],
) -> Result<Array2<f64>> {
    let mut store = ParamStore::new();
    let wid = store.add("w", w.clone());
    let bid = store.add("b", b.clone());
    let mut g = Graph::new(&store);
    let x = g.input(h_prev.clone())?;
    let (w, b) = (g.param(wid), g.param(bid));
    let y = tdnn_layer(&mut g, x, w, b, context)?;
    Ok(g.value(y).clone())
}

/// Six context layers, one plain ReLU layer, and the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tdnn<T> {
    pub config: TdnnConfig,
    pub params: ParamStore<T>,
    layers: Vec<(ParamId, ParamId)>,
    pub input_norm: Standardizer,
    /// Maps network outputs back to feature space (linear output only).
    pub output_norm: Option<Standardizer>,
}

impl<T: Real> Tdnn<T> {
    pub fn new(config: TdnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut fan_in = config.input_dim;
        let n_hidden = config.contexts.len() + 1;
        for l in 0..n_hidden {
            // A context layer sums three affine maps of its input.
            let taps = if l < config.contexts.len() { 3 } else { 1 };
            let h = config.hidden_units;
            let w = params.add(format!("layer{l}.w"), xavier_fan(fan_in, h, taps * fan_in, h, &mut rng));
            let b = params.add(format!("layer{l}.b"), Array2::zeros((1, config.hidden_units)));
            layers.push((w, b));
            fan_in = config.hidden_units;
        }
        let out_dim = config.output.dim();
        let w = params.add("output.w", xavier(fan_in, out_dim, &mut rng));
        let b = params.add("output.b", Array2::zeros((1, out_dim)));
        layers.push((w, b));
        let input_norm = Standardizer::identity(config.input_dim);
        Ok(Self {
            config,
            params,
            layers,
            input_norm,
            output_norm: None,
        })
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_params(&self, index: usize) -> (ParamId, ParamId) {
        self.layers[index]
    }

    fn check_input(&self, x: &Array2<f32>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape(
                "tdnn",
                format!("features have {} dims, model expects {}", x.ncols(), self.config.input_dim),
            ));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("zero frames".into()));
        }
        Ok(())
    }

    /// Normalized network input for raw features.
    pub fn prepare_input(&self, x: &Array2<f32>) -> Result<Array2<T>> {
        self.check_input(x)?;
        Ok(self.input_norm.apply(x))
    }

    /// Output-layer activations (logits or normalized regression output).
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, ctx) in self.config.contexts.iter().enumerate() {
            let (w, b) = self.layers[l];
            let (w, b) = (g.param(w), g.param(b));
            h = tdnn_layer(g, h, w, b, *ctx)?;
        }
        let (w, b) = self.layers[self.config.contexts.len()];
        let (w, b) = (g.param(w), g.param(b));
        let z = g.affine(h, w, b)?;
        h = g.relu(z)?;
        let (w, b) = *self.layers.last().unwrap();
        let (w, b) = (g.param(w), g.param(b));
        g.affine(h, w, b)
    }

    /// Runs the network on raw features and returns output activations.
    pub fn infer(&self, x: &Array2<f32>) -> Result<Array2<T>> {
        let input = self.prepare_input(x)?;
        let mut g = Graph::new(&self.params);
        let xv = g.input(input)?;
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            serde_json::json!({
                "model": "tdnn",
                "config": self.config,
                "input_norm": self.input_norm,
                "output_norm": self.output_norm,
            }),
            self.params.cast(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| Error::State(format!("not a TDNN checkpoint: {m}"));
        if ck.meta.get("model").and_then(|m| m.as_str()) != Some("tdnn") {
            return Err(bad("model tag"));
        }
        let config: TdnnConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let input_norm: Standardizer = serde_json::from_value(ck.meta["input_norm"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let output_norm: Option<Standardizer> =
            serde_json::from_value(ck.meta["output_norm"].clone()).map_err(|e| bad(&e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        let loaded: ParamStore<T> = ck.params.cast();
        if loaded.len() != model.params.len()
            || model.params.ids().any(|id| {
                model.params.name(id) != loaded.name(id)
                    || model.params.value(id).dim() != loaded.value(id).dim()
            })
        {
            return Err(bad("parameter layout"));
        }
        model.params.copy_values_from(&loaded);
        model.input_norm = input_norm;
        model.output_norm = output_norm;
        Ok(model)
    }
}
