//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so [`Graph::backward`] can walk the tape
//! from the loss back to the leaves in a single reverse sweep.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Reshape(Var),
    SwapLast2(Var),
    SliceCols(Var, usize),
    SelectTime(Var, usize),
    StackTime(Vec<Var>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    ShiftTime(Var, usize),
    FrameTime {
        x: Var,
        window: usize,
        stride: usize,
    },
    MaxPoolTime(Var, Vec<usize>),
    GapTime(Var),
    L2NormalizeRows(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (divides by the element count).
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Gradient, or zeros when the node did not influence the output.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::shape(op, format!("expected rank-3 input, got {s:?}"))),
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::shape(op, format!("expected rank-2 input, got {s:?}"))),
    }
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap_or(&1)
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
fn mm_a_bt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn mm_at_b_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {m}x{k} · {k2}x{n}"),
            ));
        }
        let c = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector along the last dimension of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = last_dim(self.value(x));
        if self.value(b).numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} for last dim {}", self.value(b).numel(), n),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, bv) in chunk.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `[b, p, q] -> [b, q, p]`
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let (b, p, q) = dims3(self.value(x), "swap_last2")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * p * q];
        for bi in 0..b {
            let base = bi * p * q;
            for i in 0..p {
                for j in 0..q {
                    out[base + j * p + i] = src[base + i * q + j];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, q, p], out)?, Op::SwapLast2(x), rg))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, n) = dims2(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("{start}+{len} exceeds {n} columns")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols(x, start), rg))
    }

    /// `[b, t, d] -> [b, d]` at time index `i`.
    pub fn select_time(&mut self, x: Var, i: usize) -> Result<Var> {
        let (b, t, d) = dims3(self.value(x), "select_time")?;
        if i >= t {
            return Err(Error::shape("select_time", format!("step {i} of {t}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            let o = (bi * t + i) * d;
            out.extend_from_slice(&src[o..o + d]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::SelectTime(x, i), rg))
    }

    /// Stacks `t` tensors of shape `[b, d]` into `[b, t, d]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps.first().ok_or_else(|| Error::shape("stack_time", "no steps"))?;
        let (b, d) = dims2(self.value(*first), "stack_time")?;
        let t = steps.len();
        let mut out = vec![0.0; b * t * d];
        for (ti, s) in steps.iter().enumerate() {
            let v = self.value(*s);
            if v.shape() != [b, d] {
                return Err(Error::shape("stack_time", format!("step {ti} shape {:?}", v.shape())));
            }
            for bi in 0..b {
                out[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(&v.data()[bi * d..(bi + 1) * d]);
            }
        }
        let rg = steps.iter().any(|s| self.rg(*s));
        Ok(self.push(Tensor::new(vec![b, t, d], out)?, Op::StackTime(steps.to_vec()), rg))
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let r = dims2(self.value(*first), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pn) = dims2(self.value(*p), "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", format!("rows {pr} vs {r}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenates 2-D tensors along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let n = dims2(self.value(*first), "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (pr, pn) = dims2(self.value(*p), "concat_rows")?;
            if pn != n {
                return Err(Error::shape("concat_rows", format!("cols {pn} vs {n}")));
            }
            rows += pr;
            out.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(vec![rows, n], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Causal shift along time: `y[:, t] = x[:, t - lag]`, zero for `t < lag`.
    pub fn shift_time(&mut self, x: Var, lag: usize) -> Result<Var> {
        let (b, t, d) = dims3(self.value(x), "shift_time")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            for ti in lag..t {
                let dst = (bi * t + ti) * d;
                let s = (bi * t + ti - lag) * d;
                out[dst..dst + d].copy_from_slice(&src[s..s + d]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, t, d], out)?, Op::ShiftTime(x, lag), rg))
    }

    /// Strided framing `[b, len, c] -> [b, frames, window·c]`, with
    /// `frames = (len - window) / stride + 1`.
    pub fn frame_time(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let (b, len, c) = dims3(self.value(x), "frame_time")?;
        if window == 0 || stride == 0 || len < window {
            return Err(Error::shape(
                "frame_time",
                format!("len {len} with window {window}, stride {stride}"),
            ));
        }
        let frames = (len - window) / stride + 1;
        let src = self.value(x).data();
        let w = window * c;
        let mut out = Vec::with_capacity(b * frames * w);
        for bi in 0..b {
            for fi in 0..frames {
                let s = (bi * len + fi * stride) * c;
                out.extend_from_slice(&src[s..s + w]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![b, frames, w], out)?,
            Op::FrameTime { x, window, stride },
            rg,
        ))
    }

    /// Max pooling over time with kernel 2, stride 2; a trailing odd frame is dropped.
    pub fn max_pool_time(&mut self, x: Var) -> Result<Var> {
        let (b, t, f) = dims3(self.value(x), "max_pool_time")?;
        if t < 2 {
            return Err(Error::shape("max_pool_time", format!("need t >= 2, got {t}")));
        }
        let half = t / 2;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * half * f);
        let mut arg = Vec::with_capacity(b * half * f);
        for bi in 0..b {
            for ti in 0..half {
                for fi in 0..f {
                    let i0 = (bi * t + 2 * ti) * f + fi;
                    let i1 = i0 + f;
                    let (v, i) = if src[i1] > src[i0] {
                        (src[i1], i1)
                    } else {
                        (src[i0], i0)
                    };
                    out.push(v);
                    arg.push(i);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, half, f], out)?, Op::MaxPoolTime(x, arg), rg))
    }

    /// Mean over the time axis: `[b, t, f] -> [b, f]`.
    pub fn global_avg_pool_time(&mut self, x: Var) -> Result<Var> {
        let (b, t, f) = dims3(self.value(x), "global_avg_pool_time")?;
        if t == 0 {
            return Err(Error::shape("global_avg_pool_time", "empty time axis"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; b * f];
        for bi in 0..b {
            for ti in 0..t {
                let row = &src[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                for (o, v) in out[bi * f..(bi + 1) * f].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, f], out)?, Op::GapTime(x), rg))
    }

    /// Divides each row (last dimension) by its Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = last_dim(t);
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.numel() / d.max(1));
        for row in out.data_mut().chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNorm("l2_normalize"));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::L2NormalizeRows(x, norms), rg))
    }

    /// Train-mode batch normalization over every axis but the last.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let t = self.value(x);
        let c = last_dim(t);
        let n = t.numel() / c.max(1);
        if n == 0 {
            return Err(Error::InvalidArgument("batch_norm on an empty batch".into()));
        }
        self.check_affine(gamma, beta, c, "batch_norm")?;
        let src = t.data();
        let mut mean = vec![0.0; c];
        for row in src.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in src.chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + bt[j]);
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var, count: n }))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        let c = last_dim(t);
        self.check_affine(gamma, beta, c, "batch_norm")?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics width"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(t.numel());
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - running_mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + bt[j]);
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize, op: &'static str) -> Result<()> {
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(
                op,
                format!(
                    "affine params {}/{} for {c} channels",
                    self.value(gamma).numel(),
                    self.value(beta).numel()
                ),
            ));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy of `logits[n×C]` against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = dims2(self.value(logits), "softmax_cross_entropy")?;
        if targets.len() != n || n == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!("target {bad} >= {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for (row, &y) in src.chunks(c).zip(targets) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            loss -= row[y] - mx - z.ln();
            probs.extend(row.iter().map(|v| (v - mx).exp() / z));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.shape(out)),
            ));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        // Drop gradients of constants so callers only see tracked nodes.
        for (i, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = acc(grads, &self.nodes, *a) {
                    mm_a_bt_acc(ga, g, val(*b), m, k, n);
                }
                if let Some(gb) = acc(grads, &self.nodes, *b) {
                    mm_at_b_acc(gb, val(*a), g, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = acc(grads, &self.nodes, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(grads, &self.nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = acc(grads, &self.nodes, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if let Some(ga) = acc(grads, &self.nodes, *a) {
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(vb) {
                        *x += y * w;
                    }
                }
                if let Some(gb) = acc(grads, &self.nodes, *b) {
                    for ((x, y), w) in gb.iter_mut().zip(g).zip(va) {
                        *x += y * w;
                    }
                }
            }
            Op::AddRow(x, b) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, y)| *a += y);
                }
                let n = numel(*b);
                if let Some(gb) = acc(grads, &self.nodes, *b) {
                    for chunk in g.chunks(n) {
                        gb.iter_mut().zip(chunk).for_each(|(a, y)| *a += y);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, y)| *a += c * y);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for ((a, y), s) in gx.iter_mut().zip(g).zip(out) {
                        *a += y * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for ((a, y), t) in gx.iter_mut().zip(g).zip(out) {
                        *a += y * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for ((a, y), o) in gx.iter_mut().zip(g).zip(out) {
                        if *o > 0.0 {
                            *a += y;
                        }
                    }
                }
            }
            Op::Square(x) => {
                let vx = val(*x);
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for ((a, y), v) in gx.iter_mut().zip(g).zip(vx) {
                        *a += 2.0 * v * y;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, y)| *a += y);
                }
            }
            Op::SwapLast2(x) => {
                let s = self.nodes[x.0].value.shape();
                let (b, p, q) = (s[0], s[1], s[2]);
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for bi in 0..b {
                        let base = bi * p * q;
                        for i in 0..p {
                            for j in 0..q {
                                gx[base + i * q + j] += g[base + j * p + i];
                            }
                        }
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let n = self.nodes[x.0].value.shape()[1];
                let len = node.value.shape()[1];
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for (i, grow) in g.chunks(len).enumerate() {
                        let dst = &mut gx[i * n + start..i * n + start + len];
                        dst.iter_mut().zip(grow).for_each(|(a, y)| *a += y);
                    }
                }
            }
            Op::SelectTime(x, i) => {
                let s = self.nodes[x.0].value.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for bi in 0..b {
                        let o = (bi * t + i) * d;
                        gx[o..o + d]
                            .iter_mut()
                            .zip(&g[bi * d..(bi + 1) * d])
                            .for_each(|(a, y)| *a += y);
                    }
                }
            }
            Op::StackTime(steps) => {
                let s = node.value.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                for (ti, step) in steps.iter().enumerate() {
                    if let Some(gs) = acc(grads, &self.nodes, *step) {
                        for bi in 0..b {
                            let o = (bi * t + ti) * d;
                            gs[bi * d..(bi + 1) * d]
                                .iter_mut()
                                .zip(&g[o..o + d])
                                .for_each(|(a, y)| *a += y);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.shape()[1];
                    if let Some(gp) = acc(grads, &self.nodes, *p) {
                        for r in 0..rows {
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * total + off..r * total + off + w])
                                .for_each(|(a, y)| *a += y);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = numel(*p);
                    if let Some(gp) = acc(grads, &self.nodes, *p) {
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(a, y)| *a += y);
                    }
                    off += len;
                }
            }
            Op::ShiftTime(x, lag) => {
                let s = node.value.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for bi in 0..b {
                        for ti in *lag..t {
                            let src = (bi * t + ti) * d;
                            let dst = (bi * t + ti - lag) * d;
                            for k in 0..d {
                                gx[dst + k] += g[src + k];
                            }
                        }
                    }
                }
            }
            Op::FrameTime { x, window, stride } => {
                let s = self.nodes[x.0].value.shape();
                let (b, len, c) = (s[0], s[1], s[2]);
                let frames = node.value.shape()[1];
                let w = window * c;
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for bi in 0..b {
                        for fi in 0..frames {
                            let dst = (bi * len + fi * stride) * c;
                            let src = (bi * frames + fi) * w;
                            for k in 0..w {
                                gx[dst + k] += g[src + k];
                            }
                        }
                    }
                }
            }
            Op::MaxPoolTime(x, arg) => {
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for (y, &i) in g.iter().zip(arg) {
                        gx[i] += y;
                    }
                }
            }
            Op::GapTime(x) => {
                let s = self.nodes[x.0].value.shape();
                let (b, t, f) = (s[0], s[1], s[2]);
                let inv = 1.0 / t as f64;
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let o = (bi * t + ti) * f;
                            for k in 0..f {
                                gx[o + k] += g[bi * f + k] * inv;
                            }
                        }
                    }
                }
            }
            Op::L2NormalizeRows(x, norms) => {
                let d = *node.value.shape().last().unwrap_or(&1);
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for (r, n) in norms.iter().enumerate() {
                        let y = &out[r * d..(r + 1) * d];
                        let gy = &g[r * d..(r + 1) * d];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for k in 0..d {
                            gx[r * d + k] += (gy[k] - y[k] * dot) / n;
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = (xhat.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                let gam = val(*gamma).to_vec();
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        for j in 0..c {
                            gx[r * c + j] += gam[j] * inv_std[j] / n * (n * grow[j] - sum_g[j] - hrow[j] * sum_gx[j]);
                        }
                    }
                }
                if let Some(gg) = acc(grads, &self.nodes, *gamma) {
                    gg.iter_mut().zip(&sum_gx).for_each(|(a, y)| *a += y);
                }
                if let Some(gb) = acc(grads, &self.nodes, *beta) {
                    gb.iter_mut().zip(&sum_g).for_each(|(a, y)| *a += y);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let gam = val(*gamma).to_vec();
                if let Some(gx) = acc(grads, &self.nodes, *x) {
                    for (r, grow) in g.chunks(c).enumerate() {
                        for j in 0..c {
                            gx[r * c + j] += grow[j] * gam[j] * inv_std[j];
                        }
                    }
                }
                if let Some(gg) = acc(grads, &self.nodes, *gamma) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = acc(grads, &self.nodes, *beta) {
                    for grow in g.chunks(c) {
                        gb.iter_mut().zip(grow).for_each(|(a, y)| *a += y);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = g[0] / n as f64;
                if let Some(gl) = acc(grads, &self.nodes, *logits) {
                    for (r, &y) in targets.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == y { 1.0 } else { 0.0 };
                            gl[r * c + k] += scale * (probs[r * c + k] - onehot);
                        }
                    }
                }
            }
        }
    }
}
