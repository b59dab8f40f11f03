use ndarray::Array2;
use rand::Rng;

use super::{xavier, Graph, ParamId, ParamStore, Real, Var};
use crate::{Error, Result};

/// Weights of one LSTM layer. Gate columns are ordered input, forget,
/// output, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Glorot weights, zero biases except the forget gate at +1.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_x = store.add(format!("{prefix}.w_x"), xavier(input, 4 * hidden, rng));
        let w_h = store.add(format!("{prefix}.w_h"), xavier(hidden, 4 * hidden, rng));
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(T::one());
        let b = store.add(format!("{prefix}.b"), bias);
        Self {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }
}

/// One step: returns `(h_t, c_t)`. All operands are `batch x dim`.
pub fn lstm_cell<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var)> {
    let [batch, in_dim] = g.shape(x);
    let hd = p.hidden;
    if in_dim != p.input || g.shape(h_prev) != [batch, hd] || g.shape(c_prev) != [batch, hd] {
        return Err(Error::shape(
            "lstm_cell",
            format!(
                "x {:?}, h {:?}, c {:?} for input {} hidden {}",
                g.shape(x),
                g.shape(h_prev),
                g.shape(c_prev),
                p.input,
                hd
            ),
        ));
    }
    let (w_x, w_h, b) = (g.param(p.w_x), g.param(p.w_h), g.param(p.b));
    let from_x = g.affine(x, w_x, b)?;
    let from_h = g.matmul(h_prev, w_h)?;
    let z = g.add(from_x, from_h)?;
    let zi = g.slice_cols(z, 0, hd)?;
    let zf = g.slice_cols(z, hd, 2 * hd)?;
    let zo = g.slice_cols(z, 2 * hd, 3 * hd)?;
    let zg = g.slice_cols(z, 3 * hd, 4 * hd)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let cand = g.tanh(zg)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c)?;
    let h = g.mul(o, squashed)?;
    Ok((h, c))
}

/// Runs the layer over `xs` from zero state; returns every `h_t`.
pub fn lstm_sequence<T: Real>(g: &mut Graph<'_, T>, xs: &[Var], p: &LstmParams) -> Result<Vec<Var>> {
    let Some(&first) = xs.first() else {
        return Ok(Vec::new());
    };
    let batch = g.shape(first)[0];
    let mut h = g.input(Array2::zeros((batch, p.hidden)))?;
    let mut c = g.input(Array2::zeros((batch, p.hidden)))?;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let (nh, nc) = lstm_cell(g, x, h, c, p)?;
        h = nh;
        c = nc;
        out.push(h);
    }
    Ok(out)
}
