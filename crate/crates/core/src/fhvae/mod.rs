//! Factorized hierarchical VAE: segment-level latents `z1`, utterance-level
//! latents `z2` tied to a learned per-utterance prior mean table.

mod train;

use std::collections::HashMap;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use train::{extract_z1, train_fhvae, FhvaeEpoch, FhvaeLog, FhvaeUtterance};

use crate::autodiff::{lstm_sequence, xavier, AdamConfig, Graph, LstmParams, ParamId, ParamStore, Real, Var};
use crate::checkpoint::Checkpoint;
use crate::models::Standardizer;
use crate::{Error, Result};

pub const SEGMENT_FRAMES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhvaeConfig {
    pub input_dim: usize,
    pub segment_frames: usize,
    pub lstm_units: usize,
    pub z1_dim: usize,
    pub z2_dim: usize,
    pub var_z1: f64,
    pub var_z2: f64,
    /// Hyperprior variance of the per-utterance means.
    pub var_mu2: f64,
    /// Weight of the utterance-identity term.
    pub alpha: f64,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for FhvaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 80,
            segment_frames: SEGMENT_FRAMES,
            lstm_units: 256,
            z1_dim: 32,
            z2_dim: 32,
            var_z1: 1.0,
            var_z2: 0.25,
            var_mu2: 1.0,
            alpha: 10.0,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl FhvaeConfig {
    fn validate(&self) -> Result<()> {
        if [self.input_dim, self.segment_frames, self.lstm_units, self.z1_dim, self.z2_dim, self.batch_size]
            .contains(&0)
        {
            return Err(Error::Argument("FHVAE dimensions and batch size must be positive".into()));
        }
        if !(self.var_z1 > 0.0 && self.var_z2 > 0.0 && self.var_mu2 > 0.0) {
            return Err(Error::Argument("prior variances must be positive".into()));
        }
        Ok(())
    }
}

/// A fixed-length window of raw (unnormalized) frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub frames: Array2<f32>,
    pub utterance_id: String,
    /// Start frame (training mode) or center frame (extraction mode).
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    /// Non-overlapping windows; a trailing partial window is dropped.
    Training,
    /// One window per frame `t` covering `t - len/2 .. t + len/2`, edge frames repeated.
    Extraction,
}

pub fn segment_stream(features: &Array2<f32>, utterance_id: &str, len: usize, mode: SegmentMode) -> Vec<Segment> {
    let t = features.nrows();
    if t == 0 || len == 0 {
        return Vec::new();
    }
    match mode {
        SegmentMode::Training => (0..t / len)
            .map(|k| Segment {
                frames: features.slice(s![k * len..(k + 1) * len, ..]).to_owned(),
                utterance_id: utterance_id.to_string(),
                position: k * len,
            })
            .collect(),
        SegmentMode::Extraction => {
            let back = len / 2;
            (0..t)
                .map(|c| {
                    let mut frames = Array2::zeros((len, features.ncols()));
                    for (r, mut row) in frames.rows_mut().into_iter().enumerate() {
                        let src = (c as isize + r as isize - back as isize).clamp(0, t as isize - 1);
                        row.assign(&features.row(src as usize));
                    }
                    Segment {
                        frames,
                        utterance_id: utterance_id.to_string(),
                        position: c,
                    }
                })
                .collect()
        }
    }
}

/// Reparameterization noise, one row per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise<T> {
    pub eps_z1: Array2<T>,
    pub eps_z2: Array2<T>,
}

impl<T: Real> Noise<T> {
    pub fn zeros(batch: usize, config: &FhvaeConfig) -> Self {
        Self {
            eps_z1: Array2::zeros((batch, config.z1_dim)),
            eps_z2: Array2::zeros((batch, config.z2_dim)),
        }
    }

    pub fn sample<R: Rng>(batch: usize, config: &FhvaeConfig, rng: &mut R) -> Self {
        let mut draw = |d: usize| {
            Array2::from_shape_simple_fn((batch, d), || T::lit(rng.sample::<f64, _>(StandardNormal)))
        };
        let eps_z1 = draw(config.z1_dim);
        let eps_z2 = draw(config.z2_dim);
        Self { eps_z1, eps_z2 }
    }
}

/// Per-segment averages of the bound's terms. `loss` is what training minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboParts {
    pub nll: f64,
    pub kl_z1: f64,
    pub kl_z2: f64,
    /// `-(1/K) log p(mu2_utt)` including its normalizing constant.
    pub neg_log_prior_mu2: f64,
    /// Mean `log p(utt | z2 mean)`.
    pub log_p_utt: f64,
    pub loss: f64,
}

/// Prior over `z2` for a batch.
pub enum Z2Prior<'a, T> {
    /// Rows of the utterance table; adds the hyperprior and identity terms.
    Table(&'a [usize]),
    /// Externally supplied means; only reconstruction and KL terms.
    Fixed(Array2<T>),
}

pub struct Encoding<T> {
    pub mu1: Array2<T>,
    pub logvar1: Array2<T>,
    pub mu2: Array2<T>,
    pub logvar2: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fhvae<T> {
    pub config: FhvaeConfig,
    pub params: ParamStore<T>,
    enc2: LstmParams,
    enc2_out: (ParamId, ParamId),
    enc1: LstmParams,
    enc1_out: (ParamId, ParamId),
    dec: LstmParams,
    dec_out: (ParamId, ParamId),
    table: ParamId,
    /// Sorted training utterance ids; row `i` of the table belongs to `utterances[i]`.
    pub utterances: Vec<String>,
    /// Training segments per utterance (the `K` of the hyperprior weight).
    pub segment_counts: Vec<usize>,
    lookup: HashMap<String, usize>,
    pub input_norm: Standardizer,
    /// Statistics of `[mu1, logvar1]` over the training set.
    pub z1_norm: Option<Standardizer>,
}

impl<T: Real> Fhvae<T> {
    pub fn new(config: FhvaeConfig, utterances: Vec<String>, segment_counts: Vec<usize>, seed: u64) -> Result<Self> {
        config.validate()?;
        if utterances.is_empty() {
            return Err(Error::EmptyInput("FHVAE needs at least one training utterance".into()));
        }
        if segment_counts.len() != utterances.len() {
            return Err(Error::Argument("one segment count per utterance".into()));
        }
        let mut lookup = HashMap::new();
        for (i, u) in utterances.iter().enumerate() {
            if lookup.insert(u.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate utterance {u}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (f, h, d1, d2) = (config.input_dim, config.lstm_units, config.z1_dim, config.z2_dim);
        let head = |params: &mut ParamStore<T>, name: &str, out: usize, rng: &mut ChaCha8Rng| {
            let w = params.add(format!("{name}.w"), xavier(h, out, rng));
            let b = params.add(format!("{name}.b"), Array2::zeros((1, out)));
            (w, b)
        };
        let enc2 = LstmParams::new(&mut params, "enc_z2", f, h, &mut rng);
        let enc2_out = head(&mut params, "enc_z2.out", 2 * d2, &mut rng);
        let enc1 = LstmParams::new(&mut params, "enc_z1", f + d2, h, &mut rng);
        let enc1_out = head(&mut params, "enc_z1.out", 2 * d1, &mut rng);
        let dec = LstmParams::new(&mut params, "dec", d1 + d2, h, &mut rng);
        let dec_out = head(&mut params, "dec.out", 2 * f, &mut rng);
        let table = params.add("mu2_table", Array2::zeros((utterances.len(), d2)));
        Ok(Self {
            input_norm: Standardizer::identity(f),
            config,
            params,
            enc2,
            enc2_out,
            enc1,
            enc1_out,
            dec,
            dec_out,
            table,
            utterances,
            segment_counts,
            lookup,
            z1_norm: None,
        })
    }

    pub fn table_id(&self) -> ParamId {
        self.table
    }

    pub fn utterance_index(&self, id: &str) -> Result<usize> {
        self.lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("utterance {id} is not in the FHVAE table")))
    }

    /// Normalized per-step inputs: `segment_frames` matrices of `batch x input_dim`.
    pub fn batch_inputs(&self, segments: &[Segment]) -> Result<Vec<Array2<T>>> {
        let (len, f) = (self.config.segment_frames, self.config.input_dim);
        if segments.is_empty() {
            return Err(Error::EmptyInput("empty segment batch".into()));
        }
        let mut steps = vec![Array2::zeros((segments.len(), f)); len];
        for (b, seg) in segments.iter().enumerate() {
            if seg.frames.dim() != (len, f) {
                return Err(Error::shape(
                    "fhvae_segment",
                    format!("segment {:?}, expected ({len}, {f})", seg.frames.dim()),
                ));
            }
            let norm: Array2<T> = self.input_norm.apply(&seg.frames);
            for (t, step) in steps.iter_mut().enumerate() {
                step.row_mut(b).assign(&norm.row(t));
            }
        }
        Ok(steps)
    }

    fn head(g: &mut Graph<'_, T>, h: Var, (w, b): (ParamId, ParamId), half: usize) -> Result<(Var, Var)> {
        let (w, b) = (g.param(w), g.param(b));
        let y = g.affine(h, w, b)?;
        Ok((g.slice_cols(y, 0, half)?, g.slice_cols(y, half, 2 * half)?))
    }

    fn encode_z2(&self, g: &mut Graph<'_, T>, xs: &[Var]) -> Result<(Var, Var)> {
        let hs = lstm_sequence(g, xs, &self.enc2)?;
        Self::head(g, *hs.last().unwrap(), self.enc2_out, self.config.z2_dim)
    }

    fn encode_z1(&self, g: &mut Graph<'_, T>, xs: &[Var], z2: Var) -> Result<(Var, Var)> {
        let inputs = xs.iter().map(|&x| g.concat(&[x, z2])).collect::<Result<Vec<_>>>()?;
        let hs = lstm_sequence(g, &inputs, &self.enc1)?;
        Self::head(g, *hs.last().unwrap(), self.enc1_out, self.config.z1_dim)
    }

    fn reparam(g: &mut Graph<'_, T>, mu: Var, logvar: Var, eps: &Array2<T>) -> Result<Var> {
        let half = g.scale(logvar, T::lit(0.5))?;
        let std = g.exp(half)?;
        let e = g.input(eps.clone())?;
        let noise = g.mul(std, e)?;
        g.add(mu, noise)
    }

    fn constant(g: &mut Graph<'_, T>, rows: usize, cols: usize, v: f64) -> Result<Var> {
        g.input(Array2::from_elem((rows, cols), T::lit(v)))
    }

    /// Builds the batch loss on `g`. Returns the loss node (mean over segments)
    /// and per-segment term averages.
    pub fn batch_loss(
        &self,
        g: &mut Graph<'_, T>,
        steps: &[Array2<T>],
        prior: &Z2Prior<'_, T>,
        noise: &Noise<T>,
    ) -> Result<(Var, ElboParts)> {
        let c = &self.config;
        let batch = steps.first().map(|s| s.nrows()).unwrap_or(0);
        if batch == 0 || steps.len() != c.segment_frames {
            return Err(Error::shape("fhvae_batch", format!("{} steps, batch {batch}", steps.len())));
        }
        let xs = steps.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>>>()?;
        let (mu2, lv2) = self.encode_z2(g, &xs)?;
        let z2 = Self::reparam(g, mu2, lv2, &noise.eps_z2)?;
        let (mu1, lv1) = self.encode_z1(g, &xs, z2)?;
        let z1 = Self::reparam(g, mu1, lv1, &noise.eps_z1)?;

        let z = g.concat(&[z1, z2])?;
        let dec_in = vec![z; c.segment_frames];
        let hs = lstm_sequence(g, &dec_in, &self.dec)?;
        let mut nll = None;
        for (h, x) in hs.into_iter().zip(&xs) {
            let (mean, logvar) = Self::head(g, h, self.dec_out, c.input_dim)?;
            let term = g.gaussian_nll(*x, mean, logvar)?;
            nll = Some(match nll {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        let nll = nll.unwrap();

        let zero1 = Self::constant(g, batch, c.z1_dim, 0.0)?;
        let lp1 = Self::constant(g, batch, c.z1_dim, c.var_z1.ln())?;
        let kl1 = g.kl_diag_gaussians(mu1, lv1, zero1, lp1)?;

        let lp2 = Self::constant(g, batch, c.z2_dim, c.var_z2.ln())?;
        let bf = batch as f64;
        let mut parts = ElboParts::default();
        let mut loss_const = 0.0;
        let mut total;
        match prior {
            Z2Prior::Table(idx) => {
                if idx.len() != batch {
                    return Err(Error::shape("fhvae_batch", format!("{} ids for batch {batch}", idx.len())));
                }
                let table = g.param(self.table);
                let means = g.gather_rows(table, idx)?;
                let kl2 = g.kl_diag_gaussians(mu2, lv2, means, lp2)?;

                let mut weights = Array2::zeros((batch, c.z2_dim));
                let mut prior_const = 0.0;
                let log_norm = 0.5 * c.z2_dim as f64 * (2.0 * std::f64::consts::PI * c.var_mu2).ln();
                for (b, &i) in idx.iter().enumerate() {
                    let inv_k = 1.0 / self.segment_counts[i].max(1) as f64;
                    weights.row_mut(b).fill(T::lit(inv_k / (2.0 * c.var_mu2)));
                    prior_const += inv_k * log_norm;
                }
                let w = g.input(weights)?;
                let sq = g.mul(means, means)?;
                let weighted = g.mul(sq, w)?;
                let prior_term = g.sum(weighted)?;

                let dist = g.sq_dist_rows(mu2, table)?;
                let logits = g.scale(dist, T::lit(-1.0 / (2.0 * c.var_z2)))?;
                let ce = g.softmax_cross_entropy(logits, idx)?;
                let disc = g.scale(ce, T::lit(c.alpha * bf))?;

                total = g.add(nll, kl1)?;
                total = g.add(total, kl2)?;
                total = g.add(total, prior_term)?;
                total = g.add(total, disc)?;
                parts.kl_z2 = g.scalar(kl2).to_f64().unwrap() / bf;
                parts.neg_log_prior_mu2 = (g.scalar(prior_term).to_f64().unwrap() + prior_const) / bf;
                parts.log_p_utt = -g.scalar(ce).to_f64().unwrap();
                loss_const = prior_const / bf;
            }
            Z2Prior::Fixed(means) => {
                if means.dim() != (batch, c.z2_dim) {
                    return Err(Error::shape("fhvae_batch", format!("prior means {:?}", means.dim())));
                }
                let m = g.input(means.clone())?;
                let kl2 = g.kl_diag_gaussians(mu2, lv2, m, lp2)?;
                total = g.add(nll, kl1)?;
                total = g.add(total, kl2)?;
                parts.kl_z2 = g.scalar(kl2).to_f64().unwrap() / bf;
            }
        }
        let loss = g.scale(total, T::lit(1.0 / bf))?;
        parts.nll = g.scalar(nll).to_f64().unwrap() / bf;
        parts.kl_z1 = g.scalar(kl1).to_f64().unwrap() / bf;
        parts.loss = g.scalar(loss).to_f64().unwrap() + loss_const;
        Ok((loss, parts))
    }

    /// Loss terms for training-table segments under fixed noise.
    pub fn elbo(&self, segments: &[Segment], noise: &Noise<T>) -> Result<ElboParts> {
        let idx = segments
            .iter()
            .map(|s| self.utterance_index(&s.utterance_id))
            .collect::<Result<Vec<_>>>()?;
        let steps = self.batch_inputs(segments)?;
        let mut g = Graph::new(&self.params);
        let (_, parts) = self.batch_loss(&mut g, &steps, &Z2Prior::Table(&idx), noise)?;
        Ok(parts)
    }

    /// Posterior means and log variances of both latents (z1 conditioned on the z2 mean).
    pub fn encode(&self, segments: &[Segment]) -> Result<Encoding<T>> {
        let steps = self.batch_inputs(segments)?;
        let mut g = Graph::new(&self.params);
        let xs = steps.into_iter().map(|x| g.input(x)).collect::<Result<Vec<_>>>()?;
        let (mu2, lv2) = self.encode_z2(&mut g, &xs)?;
        let (mu1, lv1) = self.encode_z1(&mut g, &xs, mu2)?;
        Ok(Encoding {
            mu1: g.value(mu1).clone(),
            logvar1: g.value(lv1).clone(),
            mu2: g.value(mu2).clone(),
            logvar2: g.value(lv2).clone(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            serde_json::json!({
                "model": "fhvae",
                "config": self.config,
                "utterances": self.utterances,
                "segment_counts": self.segment_counts,
                "input_norm": self.input_norm,
                "z1_norm": self.z1_norm,
            }),
            self.params.cast(),
        )
    }

    /// Writes `dir/fhvae.ckpt` and a `dir/fhvae.json` sidecar holding the
    /// hyperparameters, utterance table ids and normalization statistics.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        let ck = self.to_checkpoint();
        ck.save(dir.join("fhvae.ckpt"))?;
        let json = serde_json::to_string_pretty(&ck.meta).expect("meta serializes");
        crate::util::write_file(&dir.join("fhvae.json"), json.as_bytes())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: String| Error::State(format!("not an FHVAE checkpoint: {m}"));
        if ck.meta.get("model").and_then(|m| m.as_str()) != Some("fhvae") {
            return Err(bad("model tag".into()));
        }
        let field = |k: &str| ck.meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let config: FhvaeConfig = serde_json::from_value(field("config")).map_err(|e| bad(e.to_string()))?;
        let utterances: Vec<String> = serde_json::from_value(field("utterances")).map_err(|e| bad(e.to_string()))?;
        let counts: Vec<usize> = serde_json::from_value(field("segment_counts")).map_err(|e| bad(e.to_string()))?;
        let input_norm: Standardizer = serde_json::from_value(field("input_norm")).map_err(|e| bad(e.to_string()))?;
        let z1_norm: Option<Standardizer> = serde_json::from_value(field("z1_norm")).map_err(|e| bad(e.to_string()))?;
        let mut model = Self::new(config, utterances, counts, 0)?;
        let loaded: ParamStore<T> = ck.params.cast();
        if loaded.len() != model.params.len()
            || model.params.ids().any(|id| {
                model.params.name(id) != loaded.name(id) || model.params.value(id).dim() != loaded.value(id).dim()
            })
        {
            return Err(bad("parameter layout".into()));
        }
        model.params.copy_values_from(&loaded);
        model.input_norm = input_norm;
        model.z1_norm = z1_norm;
        Ok(model)
    }
}
