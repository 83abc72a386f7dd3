//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] records operations eagerly; values are computed as nodes are
//! added and [`Graph::backward`] walks the tape in reverse. Parameters are
//! read in place from a [`ParamStore`] and their gradients are returned as
//! [`Grads`].

use std::collections::HashMap;
use std::rc::Rc;

use super::{Grads, Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var, f64),
    Softmax(Var),
    LayerNorm { x: Var, xhat: Mat, inv_std: Vec<f64> },
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Pick(Var, Vec<(usize, usize)>),
    RowNormalize(Var),
}

struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each row to zero mean and unit variance.
pub(crate) fn layer_norm_rows(x: &Mat) -> (Mat, Vec<f64>) {
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut inv = Vec::with_capacity(x.rows());
    let n = x.cols() as f64;
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        inv.push(s);
    }
    (out, inv)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

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

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols()), r.shape(), "add_row shape");
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols()), r.shape(), "mul_row shape");
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `m × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!((x.rows(), 1), c.shape(), "mul_col shape");
        let mut v = x.clone();
        for i in 0..v.rows() {
            let s = c.data()[i];
            for o in v.row_mut(i) {
                *o *= s;
            }
        }
        self.push(v, Op::MulCol(a, col), &[a, col])
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `ln(max(a, eps))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| x.max(eps).ln());
        self.push(v, Op::Log(a, eps), &[a])
    }

    /// Row-wise softmax; `visible` (row-major, same shape) masks entries out.
    pub fn softmax(&mut self, a: Var, visible: Option<Rc<Vec<bool>>>) -> Var {
        let v = self.value(a).softmax_rows(visible.as_deref().map(Vec::as_slice));
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Row-wise normalization without gain or bias.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (xhat, inv_std) = layer_norm_rows(self.value(a));
        self.push(
            xhat.clone(),
            Op::LayerNorm {
                x: a,
                xhat,
                inv_std,
            },
            &[a],
        )
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(v, Op::Gather(table, ids.to_vec()), &[table])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_rows(start, end);
        self.push(v, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows(), rows, "concat_cols rows");
                v.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows cols");
            data.extend_from_slice(m.data());
        }
        let v = Mat::from_vec(data.len() / cols.max(1), cols, data);
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Column means as a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, b) in v.data_mut().iter_mut().zip(x.row(i)) {
                *o += b;
            }
        }
        v.scale_assign(1.0 / x.rows() as f64);
        self.push(v, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Selected entries as an `n × 1` column.
    pub fn pick(&mut self, a: Var, at: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(at.len(), 1, at.iter().map(|&(r, c)| x.get(r, c)).collect());
        self.push(v, Op::Pick(a, at.to_vec()), &[a])
    }

    /// Divides each row by its sum; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let s: f64 = x.row(i).iter().sum();
            for o in v.row_mut(i) {
                *o = if s != 0.0 { *o / s } else { 0.0 };
            }
        }
        self.push(v, Op::RowNormalize(a), &[a])
    }

    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = Grads::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, d: Mat| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_t(self.value(*b)));
                    send(*b, self.value(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    send(*a, g.matmul(self.value(*b)));
                    send(*b, g.t_matmul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                    send(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, r) => {
                    let mut dr = Mat::zeros(1, g.cols());
                    for k in 0..g.rows() {
                        for (o, x) in dr.data_mut().iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    send(*a, g);
                    send(*r, dr);
                }
                Op::MulRow(a, r) => {
                    let (x, rv) = (self.value(*a), self.value(*r));
                    let mut da = g.clone();
                    let mut dr = Mat::zeros(1, g.cols());
                    for k in 0..g.rows() {
                        for j in 0..g.cols() {
                            da.set(k, j, g.get(k, j) * rv.data()[j]);
                            dr.data_mut()[j] += g.get(k, j) * x.get(k, j);
                        }
                    }
                    send(*a, da);
                    send(*r, dr);
                }
                Op::MulCol(a, c) => {
                    let (x, cv) = (self.value(*a), self.value(*c));
                    let mut da = g.clone();
                    let mut dc = Mat::zeros(g.rows(), 1);
                    for k in 0..g.rows() {
                        let s = cv.data()[k];
                        let mut acc = 0.0;
                        for j in 0..g.cols() {
                            da.set(k, j, g.get(k, j) * s);
                            acc += g.get(k, j) * x.get(k, j);
                        }
                        dc.data_mut()[k] = acc;
                    }
                    send(*a, da);
                    send(*c, dc);
                }
                Op::Affine(a, s) => send(*a, g.map(|x| x * s)),
                Op::Gelu(a) => send(*a, g.zip_map(self.value(*a), |d, x| d * gelu_grad(x))),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    send(*a, g.zip_map(y, |d, y| d * y * (1.0 - y)));
                }
                Op::Log(a, eps) => {
                    let eps = *eps;
                    send(*a, g.zip_map(self.value(*a), |d, x| if x > eps { d / x } else { 0.0 }));
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut da = Mat::zeros(g.rows(), g.cols());
                    for k in 0..g.rows() {
                        let dot: f64 = g.row(k).iter().zip(y.row(k)).map(|(d, y)| d * y).sum();
                        for j in 0..g.cols() {
                            da.set(k, j, y.get(k, j) * (g.get(k, j) - dot));
                        }
                    }
                    send(*a, da);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let n = g.cols() as f64;
                    let mut dx = Mat::zeros(g.rows(), g.cols());
                    for k in 0..g.rows() {
                        let gr = g.row(k);
                        let xr = xhat.row(k);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..g.cols() {
                            dx.set(k, j, inv_std[k] * (gr[j] - mean_g - xr[j] * mean_gx));
                        }
                    }
                    send(*x, dx);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut dt = Mat::zeros(t.rows(), t.cols());
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, d) in dt.row_mut(id).iter_mut().zip(g.row(k)) {
                            *o += d;
                        }
                    }
                    send(*table, dt);
                }
                Op::SliceRows(a, start) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows(), x.cols());
                    for k in 0..g.rows() {
                        da.row_mut(start + k).copy_from_slice(g.row(k));
                    }
                    send(*a, da);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows(), x.cols());
                    for k in 0..g.rows() {
                        da.row_mut(k)[*start..start + g.cols()].copy_from_slice(g.row(k));
                    }
                    send(*a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        send(*p, g.slice_cols(off, off + w));
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).rows();
                        send(*p, g.slice_rows(off, off + h));
                        off += h;
                    }
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows(), x.cols());
                    let inv = 1.0 / x.rows() as f64;
                    for k in 0..x.rows() {
                        for (o, d) in da.row_mut(k).iter_mut().zip(g.data()) {
                            *o = d * inv;
                        }
                    }
                    send(*a, da);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    send(*a, Mat::filled(x.rows(), x.cols(), g.item()));
                }
                Op::Pick(a, at) => {
                    let x = self.value(*a);
                    let mut da = Mat::zeros(x.rows(), x.cols());
                    for (k, &(r, c)) in at.iter().enumerate() {
                        da.set(r, c, da.get(r, c) + g.data()[k]);
                    }
                    send(*a, da);
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = node.value.as_ref().unwrap();
                    let mut da = Mat::zeros(x.rows(), x.cols());
                    for k in 0..x.rows() {
                        let s: f64 = x.row(k).iter().sum();
                        if s == 0.0 {
                            continue;
                        }
                        let dot: f64 = g.row(k).iter().zip(y.row(k)).map(|(d, y)| d * y).sum();
                        for j in 0..x.cols() {
                            da.set(k, j, (g.get(k, j) - dot) / s);
                        }
                    }
                    send(*a, da);
                }
            }
        }
        out
    }
}
