use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::{ParamId, ParamStore, Real};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    RepeatRows(Var),
    ContextSum(Var, Vec<isize>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Array2<T> },
    Mse(Var, Var),
    GaussianNll { x: Var, mean: Var, logvar: Var },
    KlDiag { mq: Var, lq: Var, mp: Var, lp: Var },
    SqDistRows(Var, Var),
}

struct Node<T> {
    /// `None` for parameters, which are read from the store.
    value: Option<Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients for the parameters a graph touched.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    grads: Vec<(ParamId, Array2<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<T>)> {
        self.grads.iter().map(|(id, g)| (*id, g))
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.grads.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }
}

/// Tape of operations over one forward pass.
pub struct Graph<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
}

fn check_finite<T: Real>(op: &'static str, v: &Array2<T>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { op })
    }
}

fn same_shape<T>(op: &'static str, a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.dim(), b.dim())))
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameters are stored out of line"),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let val = self.value(v);
        [val.nrows(), val.ncols()]
    }

    /// First element; intended for `1 x 1` losses.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, op_name: &'static str, value: Array2<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Array2<T>) -> Result<Var> {
        check_finite("input", &value)?;
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", va.dim(), vb.dim())));
        }
        let y = va.dot(vb);
        self.push("matmul", y, Op::MatMul(a, b), &[a, b])
    }

    /// `x W + b` with `b` a `1 x H` row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.ncols() != vw.nrows() || vb.nrows() != 1 || vb.ncols() != vw.ncols() {
            return Err(Error::shape(
                "affine",
                format!("x {:?}, W {:?}, b {:?}", vx.dim(), vw.dim(), vb.dim()),
            ));
        }
        let y = vx.dot(vw) + vb;
        self.push("affine", y, Op::Affine(x, w, b), &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let y = self.value(a) + self.value(b);
        self.push("add", y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let y = self.value(a) - self.value(b);
        self.push("sub", y, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let y = self.value(a) * self.value(b);
        self.push("mul", y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let y = self.value(a) * factor;
        self.push("scale", y, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).mapv(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", y, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).mapv(sigmoid);
        self.push("sigmoid", y, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).mapv(|v| v.tanh());
        self.push("tanh", y, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).mapv(|v| v.exp());
        self.push("exp", y, Op::Exp(a), &[a])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no operands"));
        }
        let rows = self.value(parts[0]).nrows();
        if parts.iter().any(|&p| self.value(p).nrows() != rows) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        self.push("concat", y, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start >= end || end > v.ncols() {
            return Err(Error::shape("slice", format!("cols {start}..{end} of {:?}", v.dim())));
        }
        let y = v.slice(s![.., start..end]).to_owned();
        self.push("slice", y, Op::SliceCols(a, start, end), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start >= end || end > v.nrows() {
            return Err(Error::shape("slice", format!("rows {start}..{end} of {:?}", v.dim())));
        }
        let y = v.slice(s![start..end, ..]).to_owned();
        self.push("slice", y, Op::SliceRows(a, start, end), &[a])
    }

    /// Tiles a `1 x n` row into `rows x n`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let v = self.value(a);
        if v.nrows() != 1 || rows == 0 {
            return Err(Error::shape("repeat_rows", format!("{:?} to {rows} rows", v.dim())));
        }
        let y = v.broadcast((rows, v.ncols())).expect("single row").to_owned();
        self.push("repeat_rows", y, Op::RepeatRows(a), &[a])
    }

    /// `y[t] = sum_o x[clamp(t + o, 0, T - 1)]` over the given offsets.
    pub fn context_sum(&mut self, a: Var, offsets: &[isize]) -> Result<Var> {
        let v = self.value(a);
        let t_len = v.nrows();
        if t_len == 0 || offsets.is_empty() {
            return Err(Error::shape("context_sum", "empty input or context"));
        }
        let mut y = Array2::zeros(v.raw_dim());
        for t in 0..t_len {
            let mut row = y.row_mut(t);
            for &o in offsets {
                row += &v.row(clamp_index(t, o, t_len));
            }
        }
        self.push("context_sum", y, Op::ContextSum(a, offsets.to_vec()), &[a])
    }

    /// Rows `table[idx[0]], table[idx[1]], ...`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", v.nrows())));
        }
        let y = v.select(Axis(0), idx);
        self.push("gather_rows", y, Op::GatherRows(table, idx.to_vec()), &[table])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push("sum", y, Op::Sum(a), &[a])
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if v.nrows() != labels.len() || v.nrows() == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} rows, {} labels", v.nrows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= v.ncols()) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("label {bad} with {} classes", v.ncols()),
            ));
        }
        let probs = softmax_rows(v);
        let mut loss = T::zero();
        for (t, &l) in labels.iter().enumerate() {
            let row = v.row(t);
            let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = max + row.mapv(|x| (x - max).exp()).sum().ln();
            loss += lse - row[l];
        }
        loss /= T::from_usize(labels.len()).unwrap();
        let y = Array2::from_elem((1, 1), loss);
        self.push(
            "softmax_cross_entropy",
            y,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let d = self.value(a) - self.value(b);
        let n = T::from_usize(d.len()).unwrap();
        let y = Array2::from_elem((1, 1), d.mapv(|v| v * v).sum() / n);
        self.push("mse", y, Op::Mse(a, b), &[a, b])
    }

    /// Summed negative log density of `x` under `N(mean, exp(logvar))`.
    pub fn gaussian_nll(&mut self, x: Var, mean: Var, logvar: Var) -> Result<Var> {
        same_shape("gaussian_nll", self.value(x), self.value(mean))?;
        same_shape("gaussian_nll", self.value(x), self.value(logvar))?;
        let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        let half = T::lit(0.5);
        let (vx, vm, vl) = (self.value(x), self.value(mean), self.value(logvar));
        let mut total = T::zero();
        ndarray::Zip::from(vx).and(vm).and(vl).for_each(|&x, &m, &l| {
            total += half * (ln2pi + l + (x - m) * (x - m) * (-l).exp());
        });
        let y = Array2::from_elem((1, 1), total);
        self.push("gaussian_nll", y, Op::GaussianNll { x, mean, logvar }, &[x, mean, logvar])
    }

    /// Summed `KL(N(mq, exp lq) || N(mp, exp lp))` for diagonal Gaussians.
    pub fn kl_diag_gaussians(&mut self, mq: Var, lq: Var, mp: Var, lp: Var) -> Result<Var> {
        for other in [lq, mp, lp] {
            same_shape("kl_diag_gaussians", self.value(mq), self.value(other))?;
        }
        let half = T::lit(0.5);
        let mut total = T::zero();
        ndarray::Zip::from(self.value(mq))
            .and(self.value(lq))
            .and(self.value(mp))
            .and(self.value(lp))
            .for_each(|&mq, &lq, &mp, &lp| {
                total += half
                    * (lp - lq + (lq.exp() + (mq - mp) * (mq - mp)) / lp.exp() - T::one());
            });
        let y = Array2::from_elem((1, 1), total);
        self.push(
            "kl_diag_gaussians",
            y,
            Op::KlDiag { mq, lq, mp, lp },
            &[mq, lq, mp, lp],
        )
    }

    /// `y[b, n] = |z[b] - table[n]|^2`.
    pub fn sq_dist_rows(&mut self, z: Var, table: Var) -> Result<Var> {
        let (vz, vt) = (self.value(z), self.value(table));
        if vz.ncols() != vt.ncols() {
            return Err(Error::shape("sq_dist_rows", format!("{:?} vs {:?}", vz.dim(), vt.dim())));
        }
        let zz = vz.map_axis(Axis(1), |r| r.dot(&r)).insert_axis(Axis(1));
        let tt = vt.map_axis(Axis(1), |r| r.dot(&r)).insert_axis(Axis(0));
        let mut y = vz.dot(&vt.t()) * T::lit(-2.0);
        y += &zz;
        y += &tt;
        self.push("sq_dist_rows", y, Op::SqDistRows(z, table), &[z, table])
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::shape("backward", format!("loss shape {:?}", self.value(loss).dim())));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let mut acc = |v: Var, g: Array2<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                }
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => out.push((*id, gy)),
                Op::MatMul(a, b) => {
                    let ga = gy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gy);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Affine(x, w, b) => {
                    let gx = gy.dot(&self.value(*w).t());
                    let gw = self.value(*x).t().dot(&gy);
                    let gb = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*x, gx);
                    acc(*w, gw);
                    acc(*b, gb);
                }
                Op::Add(a, b) => {
                    acc(*a, gy.clone());
                    acc(*b, gy);
                }
                Op::Sub(a, b) => {
                    acc(*a, gy.clone());
                    acc(*b, -gy);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.value(*b);
                    let gb = &gy * self.value(*a);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale(a, f) => acc(*a, gy * *f),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
                    acc(*a, gy * mask);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(*a, gy * &y.mapv(|s| s * (T::one() - s)));
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(*a, gy * &y.mapv(|t| T::one() - t * t));
                }
                Op::Exp(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    acc(*a, gy * y);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(p, gy.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut g = Array2::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![.., *start..*end]).assign(&gy);
                    acc(*a, g);
                }
                Op::SliceRows(a, start, end) => {
                    let mut g = Array2::zeros(self.value(*a).raw_dim());
                    g.slice_mut(s![*start..*end, ..]).assign(&gy);
                    acc(*a, g);
                }
                Op::RepeatRows(a) => acc(*a, gy.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::ContextSum(a, offsets) => {
                    let t_len = gy.nrows();
                    let mut g = Array2::zeros(gy.raw_dim());
                    for t in 0..t_len {
                        for &o in offsets {
                            let mut row = g.row_mut(clamp_index(t, o, t_len));
                            row += &gy.row(t);
                        }
                    }
                    acc(*a, g);
                }
                Op::GatherRows(table, idx) => {
                    let mut g = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = g.row_mut(src);
                        row += &gy.row(r);
                    }
                    acc(*table, g);
                }
                Op::Sum(a) => {
                    let g = Array2::from_elem(self.value(*a).raw_dim(), gy[[0, 0]]);
                    acc(*a, g);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let scale = gy[[0, 0]] / T::from_usize(labels.len()).unwrap();
                    let mut g = probs.clone();
                    for (t, &l) in labels.iter().enumerate() {
                        g[[t, l]] -= T::one();
                    }
                    acc(*logits, g * scale);
                }
                Op::Mse(a, b) => {
                    let d = self.value(*a) - self.value(*b);
                    let scale = gy[[0, 0]] * T::lit(2.0) / T::from_usize(d.len()).unwrap();
                    let g = d * scale;
                    acc(*b, g.mapv(|v| -v));
                    acc(*a, g);
                }
                Op::GaussianNll { x, mean, logvar } => {
                    let s = gy[[0, 0]];
                    let (vx, vm, vl) = (self.value(*x), self.value(*mean), self.value(*logvar));
                    let prec = vl.mapv(|l| (-l).exp());
                    let diff = vx - vm;
                    let gx = &diff * &prec * s;
                    let gl = (diff.mapv(|d| d * d) * &prec).mapv(|q| T::lit(0.5) * (T::one() - q)) * s;
                    acc(*mean, gx.mapv(|v| -v));
                    acc(*x, gx);
                    acc(*logvar, gl);
                }
                Op::KlDiag { mq, lq, mp, lp } => {
                    let s = gy[[0, 0]];
                    let half = T::lit(0.5);
                    let (vmq, vlq, vmp, vlp) =
                        (self.value(*mq), self.value(*lq), self.value(*mp), self.value(*lp));
                    let inv_p = vlp.mapv(|l| (-l).exp());
                    let diff = vmq - vmp;
                    let gmq = &diff * &inv_p * s;
                    let var_q = vlq.mapv(|l| l.exp());
                    let glq = (&var_q * &inv_p).mapv(|r| half * (r - T::one())) * s;
                    let glp = ((&var_q + &diff.mapv(|d| d * d)) * &inv_p)
                        .mapv(|r| half * (T::one() - r))
                        * s;
                    acc(*mp, gmq.mapv(|v| -v));
                    acc(*mq, gmq);
                    acc(*lq, glq);
                    acc(*lp, glp);
                }
                Op::SqDistRows(z, table) => {
                    let (vz, vt) = (self.value(*z), self.value(*table));
                    let two = T::lit(2.0);
                    let row_sums = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let col_sums = gy.sum_axis(Axis(0)).insert_axis(Axis(1));
                    let gz = (vz * &row_sums - gy.dot(vt)) * two;
                    let gt = (vt * &col_sums - gy.t().dot(vz)) * two;
                    acc(*z, gz);
                    acc(*table, gt);
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { grads: out })
    }
}

fn clamp_index(t: usize, offset: isize, len: usize) -> usize {
    (t as isize + offset).clamp(0, len as isize - 1) as usize
}

/// Row-wise softmax.
pub(crate) fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_values_and_mask() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("x", array![[-1.0, 0.0, 2.0]]);
        let mut g = Graph::new(&store);
        let x = g.param(p);
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y), &array![[0.0, 0.0, 2.0]]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn kl_of_identical_standard_normals_is_zero() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let m = g.input(Array2::zeros((1, 4))).unwrap();
        let l = g.input(Array2::zeros((1, 4))).unwrap();
        let kl = g.kl_diag_gaussians(m, l, m, l).unwrap();
        assert_eq!(g.scalar(kl), 0.0);
    }

    #[test]
    fn shape_errors() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Array2::zeros((2, 3))).unwrap();
        let b = g.input(Array2::zeros((3, 2))).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { op: "add", .. })));
        assert!(matches!(g.matmul(a, a), Err(Error::Shape { op: "matmul", .. })));
        assert!(g.matmul(a, b).is_ok());
    }

    #[test]
    fn overflow_names_the_op() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Array2::from_elem((1, 1), 1000.0)).unwrap();
        assert!(matches!(g.exp(a), Err(Error::Numeric { op: "exp" })));
        assert!(matches!(
            g.input(Array2::from_elem((1, 1), f64::NAN)),
            Err(Error::Numeric { op: "input" })
        ));
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("x", array![[3.0]]);
        let mut g = Graph::new(&store);
        let x = g.param(p);
        let x2 = g.param(p);
        assert_eq!(x, x2);
        let y = g.mul(x, x2).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(p).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn context_sum_with_clamping() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(array![[1.0], [10.0], [100.0]]).unwrap();
        let y = g.context_sum(x, &[-1, 0, 1]).unwrap();
        assert_eq!(g.value(y), &array![[12.0], [111.0], [210.0]]);
    }

    #[test]
    fn softmax_ce_matches_manual() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(array![[1.0, 2.0, 3.0]]).unwrap();
        let l = g.softmax_cross_entropy(x, &[2]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        assert!((g.scalar(l) - (z.ln() - 3.0)).abs() < 1e-12);
    }
}
