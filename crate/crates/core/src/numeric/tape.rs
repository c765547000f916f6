//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape, so node
//! ids are already a topological order: inputs always precede outputs.
//! `backward` walks the tape in reverse and accumulates adjoints, summing
//! contributions when a value fans out to several consumers.
//!
//! All values are 2-D matrices; vectors are `1 x n` rows and scalars `1 x 1`.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Negative-side slope of [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;
/// Variance epsilon of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GroupSoftmax(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    SumAll(Var),
    RowSum(Var),
    Pick(Var, usize, usize),
    GruCell {
        xproj: Var,
        h: Var,
        w_hh: Var,
        b_hh: Var,
        gates: GruCache,
    },
}

#[derive(Debug, Clone)]
struct GruCache {
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    ghn: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. See the module docs.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl Tape {
    /// A tape that records gradient information.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape for evaluation only; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_matrix() {
            return Err(Error::shape("leaf", format!("expected a matrix, got {:?}", value.shape())));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, Op::Leaf, false)
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, Op::Leaf, true)
    }

    /// Records (once per tape) the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).clone();
        let grad = self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Smallest `|x|` fed to any LeakyReLU on this tape, i.e. the distance
    /// to the nearest kink. `None` if no LeakyReLU was recorded.
    pub fn min_kink_distance(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(x) => self.value(x).data().iter().map(|v| v.abs()).reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x), &[x])
    }

    // ---- elementwise ----------------------------------------------------

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.same_shape(tb) {
            Ok(())
        } else {
            Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `a[m,n] + row[1,n]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", ta.shape(), tr.shape()),
            ));
        }
        let n = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % n];
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// `a[m,n] * col[m,1]`, scaling each row of `a` by one entry of `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} * {:?}", ta.shape(), tc.shape()),
            ));
        }
        let n = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= tc.data()[i / n];
        }
        Ok(self.push(out, Op::MulCol(a, col), &[a, col]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        self.push(out, Op::LeakyRelu(x), &[x])
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    // ---- normalizations -------------------------------------------------

    /// Softmax along each row.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let n = out.cols();
        if n > 0 {
            for row in out.data_mut().chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Log-softmax along each row.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let n = out.cols();
        if n > 0 {
            for row in out.data_mut().chunks_mut(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
        }
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// Softmax over the rows sharing a group id, independently per column.
    /// Used for attention over variable-size neighbourhoods.
    pub fn group_softmax(&mut self, x: Var, groups: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if groups.len() != t.rows() {
            return Err(Error::shape(
                "group_softmax",
                format!("{} group ids for {:?}", groups.len(), t.shape()),
            ));
        }
        let (m, n) = dims(t);
        let mut out = t.clone();
        let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
        let mut max = vec![f64::NEG_INFINITY; n_groups * n];
        for r in 0..m {
            for c in 0..n {
                let slot = &mut max[groups[r] * n + c];
                *slot = slot.max(t.at(r, c));
            }
        }
        let mut sum = vec![0.0; n_groups * n];
        {
            let data = out.data_mut();
            for r in 0..m {
                for c in 0..n {
                    let e = (data[r * n + c] - max[groups[r] * n + c]).exp();
                    data[r * n + c] = e;
                    sum[groups[r] * n + c] += e;
                }
            }
            for r in 0..m {
                for c in 0..n {
                    data[r * n + c] /= sum[groups[r] * n + c];
                }
            }
        }
        Ok(self.push(out, Op::GroupSoftmax(x, groups.to_vec()), &[x]))
    }

    /// Per-row layer normalization with learnable `gain[1,n]` and `bias[1,n]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.shape(p) != (1, n) {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} {:?} for input {:?}", self.value(p).shape(), [m, n]),
                ));
            }
        }
        let t = self.value(x);
        let mut xhat = Tensor::zeros(&[m, n]);
        let mut rstd = Vec::with_capacity(m);
        for r in 0..m {
            let row = t.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for (c, v) in row.iter().enumerate() {
                xhat.data_mut()[r * n + c] = (v - mean) * s;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = xhat.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * g[i % n] + b[i % n];
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    // ---- indexing and layout -------------------------------------------

    /// Selects rows by index (embedding lookup when `x` is a table).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {:?}", t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(idx.len(), n, data);
        Ok(self.push(out, Op::Gather(x, idx.to_vec()), &[x]))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        self.gather_rows(x, &[r])
    }

    /// Sums row `i` of `x` into row `idx[i]` of a `rows`-row output.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = dims(t);
        if idx.len() != m || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} targets (< {rows}) for {:?}", idx.len(), t.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[rows, n]);
        for (r, &dst) in idx.iter().enumerate() {
            let src = t.row_slice(r);
            for (o, v) in out.data_mut()[dst * n..(dst + 1) * n].iter_mut().zip(src) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::ScatterAdd(x, idx.to_vec()), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let m = self.shape(first).0;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != m) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {m} vs {}", self.shape(*bad).0),
            ));
        }
        let total: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Tensor::matrix(m, total, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let n = self.shape(first).1;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).1 != n) {
            return Err(Error::shape(
                "concat_rows",
                format!("column counts {n} vs {}", self.shape(*bad).1),
            ));
        }
        let total: usize = parts.iter().map(|p| self.shape(*p).0).sum();
        let mut data = Vec::with_capacity(total * n);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::matrix(total, n, data);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if start > end || end > n {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {end}) of {:?}", [m, n]),
            ));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let out = Tensor::matrix(m, end - start, data);
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x), &[x])
    }

    /// Row sums as an `[m,1]` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let t = self.value(x);
        let data = (0..m)
            .map(|r| if n == 0 { 0.0 } else { t.row_slice(r).iter().sum() })
            .collect();
        let out = Tensor::matrix(m, 1, data);
        self.push(out, Op::RowSum(x), &[x])
    }

    /// Single entry as a scalar.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if r >= m || c >= n {
            return Err(Error::shape("pick", format!("({r},{c}) of {:?}", [m, n])));
        }
        let out = Tensor::scalar(self.value(x).at(r, c));
        Ok(self.push(out, Op::Pick(x, r, c), &[x]))
    }

    // ---- recurrent -----------------------------------------------------

    /// One GRU step with gate order (reset, update, candidate):
    ///
    /// ```text
    /// gh = h W_hh + b_hh
    /// r  = sigmoid(xr + ghr)
    /// z  = sigmoid(xz + ghz)
    /// n  = tanh(xn + r * ghn)
    /// h' = (1 - z) * n + z * h
    /// ```
    ///
    /// `xproj[1,3d]` is the already projected input `x W_ih + b_ih`.
    pub fn gru_cell(&mut self, xproj: Var, h: Var, w_hh: Var, b_hh: Var) -> Result<Var> {
        let (hr, d) = self.shape(h);
        let ok = hr == 1
            && self.shape(xproj) == (1, 3 * d)
            && self.shape(w_hh) == (d, 3 * d)
            && self.shape(b_hh) == (1, 3 * d);
        if !ok {
            return Err(Error::shape(
                "gru_cell",
                format!(
                    "xproj {:?}, h {:?}, w_hh {:?}, b_hh {:?}",
                    self.value(xproj).shape(),
                    self.value(h).shape(),
                    self.value(w_hh).shape(),
                    self.value(b_hh).shape()
                ),
            ));
        }
        let th = self.value(h);
        let mut gh = th.matmul(self.value(w_hh));
        gh.add_assign(self.value(b_hh));
        let xp = self.value(xproj).data();
        let gh = gh.data();
        let hv = th.data();
        let mut cache = GruCache {
            r: Vec::with_capacity(d),
            z: Vec::with_capacity(d),
            n: Vec::with_capacity(d),
            ghn: gh[2 * d..].to_vec(),
        };
        let mut out = Vec::with_capacity(d);
        for k in 0..d {
            let r = sigmoid(xp[k] + gh[k]);
            let z = sigmoid(xp[d + k] + gh[d + k]);
            let n = (xp[2 * d + k] + r * gh[2 * d + k]).tanh();
            out.push((1.0 - z) * n + z * hv[k]);
            cache.r.push(r);
            cache.z.push(z);
            cache.n.push(n);
        }
        let out = Tensor::row(out);
        Ok(self.push(
            out,
            Op::GruCell {
                xproj,
                h,
                w_hh,
                b_hh,
                gates: cache,
            },
            &[xproj, h, w_hh, b_hh],
        ))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(&shape, 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(a) => a.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.needs(*row) {
                    let n = g.cols();
                    let mut s = vec![0.0; n];
                    for (i, v) in g.data().iter().enumerate() {
                        s[i % n] += v;
                    }
                    acc(*row, Tensor::row(s));
                }
            }
            Op::MulCol(a, col) => {
                let n = g.cols();
                let tc = self.value(*col);
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for (i, v) in ga.data_mut().iter_mut().enumerate() {
                        *v *= tc.data()[i / n];
                    }
                    acc(*a, ga);
                }
                if self.needs(*col) {
                    let ta = self.value(*a);
                    let mut s = vec![0.0; g.rows()];
                    for (i, (gv, av)) in g.data().iter().zip(ta.data()).enumerate() {
                        s[i / n] += gv * av;
                    }
                    acc(*col, Tensor::matrix(g.rows(), 1, s));
                }
            }
            Op::Affine(x, scale) => acc(*x, g.map(|v| v * scale)),
            Op::Sigmoid(x) => acc(*x, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::LeakyRelu(x) => acc(
                *x,
                g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { LEAKY_SLOPE * gv }),
            ),
            Op::Softplus(x) => acc(*x, g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv))),
            Op::Softmax(x) => {
                let n = out.cols();
                let mut gx = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        gx.data_mut()[r * n + c] = y[c] * (gy[c] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::LogSoftmax(x) => {
                let n = out.cols();
                let mut gx = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gy = g.row_slice(r);
                    let total: f64 = gy.iter().sum();
                    for c in 0..n {
                        gx.data_mut()[r * n + c] = gy[c] - y[c].exp() * total;
                    }
                }
                acc(*x, gx);
            }
            Op::GroupSoftmax(x, groups) => {
                let (m, n) = dims(out);
                let n_groups = groups.iter().copied().max().map_or(0, |v| v + 1);
                let mut dot = vec![0.0; n_groups * n];
                for r in 0..m {
                    for c in 0..n {
                        dot[groups[r] * n + c] += out.at(r, c) * g.at(r, c);
                    }
                }
                let mut gx = Tensor::zeros(&[m, n]);
                for r in 0..m {
                    for c in 0..n {
                        gx.data_mut()[r * n + c] = out.at(r, c) * (g.at(r, c) - dot[groups[r] * n + c]);
                    }
                }
                acc(*x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = dims(out);
                let gv = self.value(*gain).data();
                if self.needs(*x) {
                    let mut gx = Tensor::zeros(&[m, n]);
                    for r in 0..m {
                        let gy = g.row_slice(r);
                        let xh = xhat.row_slice(r);
                        let dxh: Vec<f64> = (0..n).map(|c| gy[c] * gv[c]).collect();
                        let sum: f64 = dxh.iter().sum();
                        let dot: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx.data_mut()[r * n + c] =
                                rstd[r] / n as f64 * (n as f64 * dxh[c] - sum - xh[c] * dot);
                        }
                    }
                    acc(*x, gx);
                }
                if self.needs(*gain) {
                    let mut s = vec![0.0; n];
                    for (i, (a, b)) in g.data().iter().zip(xhat.data()).enumerate() {
                        s[i % n] += a * b;
                    }
                    acc(*gain, Tensor::row(s));
                }
                if self.needs(*bias) {
                    let mut s = vec![0.0; n];
                    for (i, a) in g.data().iter().enumerate() {
                        s[i % n] += a;
                    }
                    acc(*bias, Tensor::row(s));
                }
            }
            Op::Gather(x, idx) => {
                let (m, n) = self.shape(*x);
                let mut gx = Tensor::zeros(&[m, n]);
                for (r, &src) in idx.iter().enumerate() {
                    let row = g.row_slice(r);
                    for (o, v) in gx.data_mut()[src * n..(src + 1) * n].iter_mut().zip(row) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::ScatterAdd(x, idx) => {
                let n = g.cols();
                let mut data = Vec::with_capacity(idx.len() * n);
                for &dst in idx {
                    data.extend_from_slice(g.row_slice(dst));
                }
                acc(*x, Tensor::matrix(idx.len(), n, data));
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.needs(*p) {
                        let mut data = Vec::with_capacity(m * w);
                        for r in 0..m {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        acc(*p, Tensor::matrix(m, w, data));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    if self.needs(*p) {
                        let data = g.data()[offset * n..(offset + h) * n].to_vec();
                        acc(*p, Tensor::matrix(h, n, data));
                    }
                    offset += h;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.shape(*x);
                let w = g.cols();
                let mut gx = Tensor::zeros(&[m, n]);
                for r in 0..m {
                    gx.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row_slice(r));
                }
                acc(*x, gx);
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::SumAll(x) => {
                let s = self.value(*x).shape().to_vec();
                acc(*x, Tensor::filled(&s, g.item()));
            }
            Op::RowSum(x) => {
                let (m, n) = self.shape(*x);
                let mut gx = Tensor::zeros(&[m, n]);
                for (i, v) in gx.data_mut().iter_mut().enumerate() {
                    *v = g.data()[i / n];
                }
                acc(*x, gx);
            }
            Op::Pick(x, r, c) => {
                let (m, n) = self.shape(*x);
                let mut gx = Tensor::zeros(&[m, n]);
                gx.data_mut()[r * n + c] = g.item();
                acc(*x, gx);
            }
            Op::GruCell {
                xproj,
                h,
                w_hh,
                b_hh,
                gates,
            } => {
                let d = out.cols();
                let dh_out = g.data();
                let hv = self.value(*h).data();
                let mut dx = vec![0.0; 3 * d];
                let mut dh = vec![0.0; d];
                for k in 0..d {
                    let (r, z, n) = (gates.r[k], gates.z[k], gates.n[k]);
                    let dn = dh_out[k] * (1.0 - z);
                    let dz = dh_out[k] * (hv[k] - n);
                    dh[k] = dh_out[k] * z;
                    let dan = dn * (1.0 - n * n);
                    let daz = dz * z * (1.0 - z);
                    let dar = dan * gates.ghn[k] * r * (1.0 - r);
                    dx[k] = dar;
                    dx[d + k] = daz;
                    dx[2 * d + k] = dan;
                }
                // dgh equals dx except the candidate block, which is gated by r.
                let mut dgh = dx.clone();
                for k in 0..d {
                    dgh[2 * d + k] *= gates.r[k];
                }
                let dgh = Tensor::row(dgh);
                if self.needs(*h) {
                    let back = dgh.matmul_t(self.value(*w_hh));
                    for (a, b) in dh.iter_mut().zip(back.data()) {
                        *a += b;
                    }
                    acc(*h, Tensor::row(dh));
                }
                if self.needs(*w_hh) {
                    acc(*w_hh, self.value(*h).t_matmul(&dgh));
                }
                acc(*b_hh, dgh);
                acc(*xproj, Tensor::row(dx));
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    /// Gradient of the loss with respect to a recorded value.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter recorded on `tape`.
    pub fn param_grads(&self, tape: &Tape) -> Gradients {
        let mut out = Gradients::default();
        let mut recorded: Vec<_> = tape.params.iter().collect();
        recorded.sort();
        for (&id, &v) in recorded {
            if let Some(g) = self.grad(v) {
                out.set(id, g.clone());
            }
        }
        out
    }
}
