//! Reverse-mode autodiff over 2-D `f64` arrays.
//!
//! Every tensor in the network is a matrix (token sequences, attention maps,
//! prediction grids, scalars as 1x1), so a flat tape of matrix ops is enough.
//! Nodes are appended in topological order; `backward` walks the tape in
//! reverse and accumulates gradients into the registered parameter slots.

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

pub type Value = Arc<Array2<f64>>;

/// Handle into a [`Graph`]'s tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    /// Matrix plus a broadcast `1 x m` row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// `exp(clamp(x, lo, hi))`.
    ExpClamp(Var, f64, f64),
    Ln(Var),
    Abs(Var),
    /// `x.powf(k)` for `x >= 0`; `k == 0` yields exact ones with zero gradient.
    PowConst(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Transpose(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
}

struct Node {
    value: Value,
    op: Op,
    /// Parameter slot this leaf feeds gradient into, if any.
    param: Option<usize>,
    /// Cached forward intermediates needed by the backward pass.
    aux: Option<Array2<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.push_aux(value, op, None)
    }

    fn push_aux(&mut self, value: Array2<f64>, op: Op, aux: Option<Array2<f64>>) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, param: None, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.value(v).dim(), (1, 1));
        self.value(v)[[0, 0]]
    }

    /// Registers a constant input (no gradient tracked).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a shared constant without copying the backing array.
    pub fn shared(&mut self, value: Value) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: None, aux: None });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter leaf whose gradient is collected under `slot`.
    pub fn param(&mut self, slot: usize, value: Value) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: Some(slot), aux: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + &self.value(row).row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp_clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi).exp());
        self.push(v, Op::ExpClamp(a, lo, hi))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn pow_const(&mut self, a: Var, k: f64) -> Var {
        let v = if k == 0.0 {
            Array2::ones(self.value(a).dim())
        } else {
            self.value(a).mapv(|x| x.powf(k))
        };
        self.push(v, Op::PowConst(a, k))
    }

    /// Row-wise softmax. Entries at or below `-1e30` (additive masks)
    /// underflow to exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with learnable `1 x m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Array2::zeros((n, 1));
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[[i, 0]] = inv;
            for j in 0..m {
                xhat[[i, j]] = (xv[[i, j]] - mean) * inv;
            }
        }
        let g = self.value(gain).row(0).to_owned();
        let b = self.value(bias).row(0).to_owned();
        let mut out = xhat.clone();
        for i in 0..n {
            for j in 0..m {
                out[[i, j]] = out[[i, j]] * g[j] + b[j];
            }
        }
        // aux keeps xhat with inv_std appended as an extra column.
        let aux = concatenate![Axis(1), xhat, inv_std];
        self.push_aux(out, Op::LayerNorm { x, gain, bias }, Some(aux))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("column concat");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("row concat");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Reshape in logical (row-major) element order, independent of the
    /// source's memory layout.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = logical_reshape(self.value(a), rows, cols);
        self.push(v, Op::Reshape(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Backpropagates from the given roots (each seeded with an upstream
    /// gradient) and returns gradients for every parameter slot.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)], num_slots: usize) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (var, seed) in seeds {
            debug_assert_eq!(self.value(*var).dim(), seed.dim());
            accumulate(&mut grads[var.0], seed.clone());
        }
        let mut param_grads: Vec<Array2<f64>> = Vec::with_capacity(num_slots);
        let mut slot_of: Vec<Option<usize>> = vec![None; num_slots];

        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    if let Some(slot) = node.param {
                        match slot_of[slot] {
                            Some(i) => param_grads[i] += &grad,
                            None => {
                                slot_of[slot] = Some(param_grads.len());
                                param_grads.push(grad);
                            }
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let da = grad.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&grad);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], grad.clone());
                    accumulate(&mut grads[b.0], grad);
                }
                Op::AddRow(a, row) => {
                    let drow = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], drow);
                    accumulate(&mut grads[a.0], grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], grad.clone());
                    accumulate(&mut grads[b.0], -grad);
                }
                Op::Mul(a, b) => {
                    let da = &grad * self.value(*b);
                    let db = &grad * self.value(*a);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = &grad / bv;
                    let db = -&grad * self.value(*a) / (bv * bv);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Scale(a, k) => accumulate(&mut grads[a.0], grad * *k),
                Op::AddScalar(a, _) => accumulate(&mut grads[a.0], grad),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads[a.0], grad * mask);
                }
                Op::Sigmoid(a) => {
                    let y: &Array2<f64> = &node.value;
                    accumulate(&mut grads[a.0], grad * y * &(1.0 - y));
                }
                Op::ExpClamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let y: &Array2<f64> = &node.value;
                    let mask = x.mapv(|e| if e > *lo && e < *hi { 1.0 } else { 0.0 });
                    accumulate(&mut grads[a.0], grad * y * mask);
                }
                Op::Ln(a) => {
                    let da = &grad / self.value(*a);
                    accumulate(&mut grads[a.0], da);
                }
                Op::Abs(a) => {
                    let sign = self.value(*a).mapv(f64::signum);
                    accumulate(&mut grads[a.0], grad * sign);
                }
                Op::PowConst(a, k) => {
                    if *k != 0.0 {
                        let dx = self.value(*a).mapv(|e| *k * e.powf(*k - 1.0));
                        accumulate(&mut grads[a.0], grad * dx);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y: &Array2<f64> = &node.value;
                    let mut da = grad.clone();
                    for i in 0..y.nrows() {
                        let dot: f64 = da.row(i).iter().zip(y.row(i)).map(|(g, p)| g * p).sum();
                        for j in 0..y.ncols() {
                            da[[i, j]] = (da[[i, j]] - dot) * y[[i, j]];
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let aux = node.aux.as_ref().expect("layer norm aux");
                    let m = aux.ncols() - 1;
                    let xhat = aux.slice(s![.., ..m]);
                    let inv_std = aux.slice(s![.., m..]);
                    let g = self.value(*gain).row(0).to_owned();
                    let n = xhat.nrows();

                    let mut dgain = Array2::zeros((1, m));
                    let mut dbias = Array2::zeros((1, m));
                    let mut dx = Array2::zeros((n, m));
                    for i in 0..n {
                        let inv = inv_std[[i, 0]];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..m {
                            let dy = grad[[i, j]];
                            let xh = xhat[[i, j]];
                            dgain[[0, j]] += dy * xh;
                            dbias[[0, j]] += dy;
                            let dxh = dy * g[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh;
                        }
                        mean_dxhat /= m as f64;
                        mean_dxhat_xhat /= m as f64;
                        for j in 0..m {
                            let dxh = grad[[i, j]] * g[j];
                            dx[[i, j]] = inv * (dxh - mean_dxhat - xhat[[i, j]] * mean_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gain.0], dgain);
                    accumulate(&mut grads[bias.0], dbias);
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], grad.t().to_owned()),
                Op::SliceCols(a, start, end) => {
                    let mut da = Array2::zeros(self.value(*a).dim());
                    da.slice_mut(s![.., *start..*end]).assign(&grad);
                    accumulate(&mut grads[a.0], da);
                }
                Op::SliceRows(a, start, end) => {
                    let mut da = Array2::zeros(self.value(*a).dim());
                    da.slice_mut(s![*start..*end, ..]).assign(&grad);
                    accumulate(&mut grads[a.0], da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let dp = grad.slice(s![.., offset..offset + w]).to_owned();
                        accumulate(&mut grads[p.0], dp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        let dp = grad.slice(s![offset..offset + h, ..]).to_owned();
                        accumulate(&mut grads[p.0], dp);
                        offset += h;
                    }
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.value(*a).dim();
                    let da = logical_reshape(&grad, rows, cols);
                    accumulate(&mut grads[a.0], da);
                }
                Op::SumAll(a) => {
                    let da = Array2::from_elem(self.value(*a).dim(), grad[[0, 0]]);
                    accumulate(&mut grads[a.0], da);
                }
            }
        }

        (0..num_slots)
            .map(|slot| match slot_of[slot] {
                Some(i) => std::mem::take(&mut param_grads[i]),
                None => Array2::zeros((0, 0)),
            })
            .collect()
    }
}

fn logical_reshape(src: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    debug_assert_eq!(src.len(), rows * cols);
    Array2::from_shape_vec((rows, cols), src.iter().cloned().collect())
        .expect("element count preserved")
}

fn accumulate(slot: &mut Option<Array2<f64>>, grad: Array2<f64>) {
    match slot {
        Some(existing) => *existing += &grad,
        None => *slot = Some(grad),
    }
}
