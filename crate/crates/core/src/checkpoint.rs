//! CKPT1 binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CKPT" u8 version=1
//! u32 meta_len, meta JSON
//! u32 n_params, then per parameter: u16 name_len, name, u32 rows, u32 cols, f32 payload
//! u8 has_optimizer [u8 kind, f64 step_size, u8 has_clip, f64 clip, f64 beta1, f64 beta2,
//!                   f64 eps, u64 step, u8 has_moments, (m, v) f32 payloads per parameter]
//! u8 has_rng [32-byte seed, u64 stream, u128 word_pos]
//! ```

use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::{AdamConfig, OptimizerKind, OptimizerState, ParamStore};
use crate::util::{read_file, write_file};
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u8 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, params: ParamStore<f32>) -> Self {
        Self {
            meta,
            params,
            optimizer: None,
            rng: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CKPT_MAGIC);
        w.push(CKPT_VERSION);
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        put_u32(&mut w, meta.len() as u32);
        w.extend_from_slice(&meta);
        put_u32(&mut w, self.params.len() as u32);
        for id in self.params.ids() {
            let name = self.params.name(id).as_bytes();
            w.extend_from_slice(&(name.len() as u16).to_le_bytes());
            w.extend_from_slice(name);
            let v = self.params.value(id);
            put_u32(&mut w, v.nrows() as u32);
            put_u32(&mut w, v.ncols() as u32);
            put_f32s(&mut w, v);
        }
        match &self.optimizer {
            None => w.push(0),
            Some(o) => {
                w.push(1);
                w.push(match o.kind {
                    OptimizerKind::Sgd => 0,
                    OptimizerKind::Adam => 1,
                });
                put_f64(&mut w, o.step_size);
                w.push(o.clip_norm.is_some() as u8);
                put_f64(&mut w, o.clip_norm.unwrap_or(0.0));
                put_f64(&mut w, o.adam.beta1);
                put_f64(&mut w, o.adam.beta2);
                put_f64(&mut w, o.adam.eps);
                w.extend_from_slice(&o.step.to_le_bytes());
                let has_moments = !o.m.is_empty();
                w.push(has_moments as u8);
                if has_moments {
                    for (m, v) in o.m.iter().zip(&o.v) {
                        put_f32s(&mut w, m);
                        put_f32s(&mut w, v);
                    }
                }
            }
        }
        match &self.rng {
            None => w.push(0),
            Some(r) => {
                w.push(1);
                w.extend_from_slice(&r.seed);
                w.extend_from_slice(&r.stream.to_le_bytes());
                w.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        w
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::format(path, "missing CKPT magic"));
        }
        let version = r.u8()?;
        if version != CKPT_VERSION {
            return Err(Error::Unsupported {
                path: path.into(),
                message: format!("CKPT version {version}"),
            });
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(path, format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
                .to_owned();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let value = r.f32s(rows, cols)?;
            params.add(name, value);
        }
        let optimizer = if r.u8()? == 1 {
            let kind = match r.u8()? {
                0 => OptimizerKind::Sgd,
                1 => OptimizerKind::Adam,
                k => return Err(Error::format(path, format!("optimizer kind {k}"))),
            };
            let step_size = r.f64()?;
            let has_clip = r.u8()? == 1;
            let clip = r.f64()?;
            let adam = AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let (mut m, mut v) = (Vec::new(), Vec::new());
            if r.u8()? == 1 {
                for id in params.ids() {
                    let (rows, cols) = params.value(id).dim();
                    m.push(r.f32s(rows, cols)?);
                    v.push(r.f32s(rows, cols)?);
                }
            }
            Some(OptimizerState {
                kind,
                step_size,
                clip_norm: has_clip.then_some(clip),
                adam,
                step,
                m,
                v,
            })
        } else {
            None
        };
        let rng = if r.u8()? == 1 {
            let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
            let stream = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
            Some(RngState {
                seed,
                stream,
                word_pos,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            meta,
            params,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&read_file(path)?, path)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(w: &mut Vec<u8>, a: &Array2<f32>) {
    for v in a.iter() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let raw = self.take(4 * rows * cols)?;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("sized read"))
    }
}
