use rand::Rng as _;

use super::kernels::{dot, matmul_nn, matmul_nt, matmul_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Transpose(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run record of a computation. Nodes are appended in evaluation
/// order, so the reverse of insertion order is a valid backward schedule.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
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
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Broadcast relation between two elementwise operands: either equal shapes,
/// or one shape is a suffix of the other and is repeated over the leading
/// dimensions.
fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || a.ends_with(b) {
        Ok(a.to_vec())
    } else if b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, &[a, b]))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let data = if na == n && nb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
    };
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Sums `g` down to `shape`, which must be a suffix of `g`'s shape.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks_exact(n.max(1)) {
        for (o, x) in out.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    Tensor::new(shape, out).expect("suffix shape")
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `axes[i]`.
fn permute_data(x: &Tensor, axes: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let src = x.data();
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permuted shape")
}

fn transpose_last2(x: &Tensor) -> Tensor {
    let r = x.rank();
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    permute_data(x, &axes)
}

/// Geometry of a (possibly batched) matrix product.
struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// `b` is a single matrix shared by every batch element.
    shared_b: bool,
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(MatMulDims, Vec<usize>)> {
    let bad = || Error::shape("matmul", &[a, b]);
    if a.len() < 2 || b.len() < 2 {
        return Err(bad());
    }
    let k = a[a.len() - 1];
    let (bk, bn) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != bk {
        return Err(bad());
    }
    let mut out_shape = a[..a.len() - 1].to_vec();
    out_shape.push(bn);
    if b.len() == 2 {
        let m = a[..a.len() - 1].iter().product();
        return Ok((
            MatMulDims {
                batch: 1,
                m,
                k,
                n: bn,
                shared_b: true,
            },
            out_shape,
        ));
    }
    if a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(bad());
    }
    let batch = a[..a.len() - 2].iter().product();
    Ok((
        MatMulDims {
            batch,
            m: a[a.len() - 2],
            k,
            n: bn,
            shared_b: false,
        },
        out_shape,
    ))
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        check_finite(name, &value)?;
        let rg = self.rg(inputs);
        Ok(self.push(value, rg, op))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = broadcast(name, self.shape(a), self.shape(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), shape, f);
        self.record(name, value, &[a, b], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.record("add_scalar", value, &[a], Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.record("mul_scalar", value, &[a], Op::MulScalar(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -1.0)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (d, out_shape) = matmul_dims(self.shape(a), self.shape(b), trans_b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; d.batch * d.m * d.n];
        let (sa, sb, so) = (d.m * d.k, if d.shared_b { 0 } else { d.k * d.n }, d.m * d.n);
        for i in 0..d.batch {
            let (ai, bi, oi) = (
                &av[i * sa..(i + 1) * sa],
                &bv[i * sb..i * sb + d.k * d.n],
                &mut out[i * so..(i + 1) * so],
            );
            if trans_b {
                matmul_nt(ai, bi, oi, d.m, d.k, d.n);
            } else {
                matmul_nn(ai, bi, oi, d.m, d.k, d.n);
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.record("matmul", value, &[a, b], Op::MatMul { a, b, trans_b })
    }

    /// `a · b` over the last two axes. `b` is either a matrix that is shared
    /// across all leading axes of `a`, or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` (transpose of `b`'s last two axes) without materializing it.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() < 2 {
            return Err(Error::shape("transpose", &[self.shape(a)]));
        }
        let value = transpose_last2(self.value(a));
        self.record("transpose", value, &[a], Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.record("reshape", value, &[a], Op::Reshape(a))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.value(a).rank();
        let mut seen = axes.to_vec();
        seen.sort_unstable();
        if seen != (0..rank).collect::<Vec<_>>() {
            return Err(Error::shape("permute", &[self.shape(a), axes]));
        }
        let value = permute_data(self.value(a), axes);
        self.record("permute", value, &[a], Op::Permute(a, axes.to_vec()))
    }

    /// Rows of `table` (viewed as `[rows, last_dim]`) selected by `ids`;
    /// result is `[ids.len(), last_dim]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() < 1 {
            return Err(Error::shape("gather_rows", &[t.shape()]));
        }
        let d = t.last_dim();
        let rows = t.len() / d.max(1);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                shapes: format!("index {bad} out of range for {:?}", t.shape()),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new([ids.len(), d], out)?;
        self.record(
            "gather_rows",
            value,
            &[table],
            Op::GatherRows(table, ids.to_vec()),
        )
    }

    /// Embedding lookup: one row of `table` per token id.
    pub fn embedding_gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.gather_rows(table, &ids)
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let d = x.last_dim();
        for row in out.data_mut().chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.record("softmax_rows", out, &[a], Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let d = x.last_dim();
        for row in out.data_mut().chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.record("log_softmax_rows", out, &[a], Op::LogSoftmaxRows(a))
    }

    /// Normalizes each row of `x` to zero mean and unit variance, then
    /// applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                &[self.shape(x), self.shape(gamma), self.shape(beta)],
            ));
        }
        let rows = xv.len() / d;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in xv.rows() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| g[i % d] * h + b[i % d])
            .collect();
        let value = Tensor::new(xv.shape(), out)?;
        self.record(
            "layer_norm",
            value,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(gelu);
        self.record("gelu", value, &[a], Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record("sigmoid", value, &[a], Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.record("softplus", value, &[a], Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.record("log", value, &[a], Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.record("exp", value, &[a], Op::Exp(a))
    }

    /// Inner product of two vectors of equal length; scalar result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 1 || x.shape() != y.shape() {
            return Err(Error::shape("dot", &[x.shape(), y.shape()]));
        }
        let value = Tensor::scalar(dot(x.data(), y.data()));
        self.record("dot", value, &[a, b], Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.record("sum", value, &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", &[x.shape()]));
        }
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.record("mean", value, &[a], Op::Mean(a))
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 {
            return Err(Error::shape("sum_rows", &[x.shape()]));
        }
        let sums: Vec<f64> = x.rows().map(|r| r.iter().sum()).collect();
        let value = Tensor::new(&x.shape()[..x.rank() - 1], sums)?;
        self.record("sum_rows", value, &[a], Op::SumRows(a))
    }

    /// `a[start..end]` along the first axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 || start > end || end > x.shape()[0] {
            return Err(Error::Shape {
                op: "slice",
                shapes: format!("{start}..{end} of {:?}", x.shape()),
            });
        }
        let inner: usize = x.shape()[1..].iter().product();
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let value = Tensor::new(shape, x.data()[start * inner..end * inner].to_vec())?;
        self.record("slice", value, &[a], Op::Slice(a, start))
    }

    /// Joins along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape {
            op: "concat",
            shapes: "no inputs".into(),
        })?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let x = self.value(p);
            if x.rank() == 0 || x.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", &[self.shape(*first), x.shape()]));
            }
            rows += x.shape()[0];
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        self.record("concat", value, parts, Op::Concat(parts.to_vec()))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        if !train || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!(
                "dropout probability {p} must be below 1"
            )));
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape(), out)?;
        self.record("dropout", value, &[a], Op::Dropout(a, mask))
    }

    /// Reverse pass from a scalar `loss`, seeded with 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", &[self.shape(loss)]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, reduce_to(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, reduce_to(&g.map(|x| -x), val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let ga = zip_broadcast(g, val(*b), g.shape().to_vec(), |x, y| x * y);
                    self.accumulate(grads, *a, reduce_to(&ga, val(*a).shape()));
                }
                if needs(*b) {
                    let gb = zip_broadcast(g, val(*a), g.shape().to_vec(), |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&gb, val(*b).shape()));
                }
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (val(*a), val(*b));
                let (d, _) =
                    matmul_dims(av.shape(), bv.shape(), *trans_b).expect("checked in forward");
                let (sa, sb, so) = (d.m * d.k, if d.shared_b { 0 } else { d.k * d.n }, d.m * d.n);
                let gd = g.data();
                if needs(*a) {
                    let mut ga = vec![0.0; av.len()];
                    for i in 0..d.batch {
                        let gi = &gd[i * so..(i + 1) * so];
                        let bi = &bv.data()[i * sb..i * sb + d.k * d.n];
                        let out = &mut ga[i * sa..(i + 1) * sa];
                        if *trans_b {
                            // b is [n,k]: ga = g · b
                            matmul_nn(gi, bi, out, d.m, d.n, d.k);
                        } else {
                            // b is [k,n]: ga = g · bᵀ
                            matmul_nt(gi, bi, out, d.m, d.n, d.k);
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(av.shape(), ga).expect("shape"));
                }
                if needs(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for i in 0..d.batch {
                        let gi = &gd[i * so..(i + 1) * so];
                        let ai = &av.data()[i * sa..(i + 1) * sa];
                        let out = &mut gb[i * sb..i * sb + d.k * d.n];
                        if *trans_b {
                            // gb[n,k] = gᵀ · a
                            matmul_tn(gi, ai, out, d.m, d.n, d.k);
                        } else {
                            // gb[k,n] = aᵀ · g
                            matmul_tn(ai, gi, out, d.m, d.k, d.n);
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), gb).expect("shape"));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose_last2(g)),
            Op::Reshape(a) => {
                let ga = g
                    .clone()
                    .reshaped(val(*a).shape().to_vec())
                    .expect("same size");
                self.accumulate(grads, *a, ga);
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                self.accumulate(grads, *a, permute_data(g, &inverse));
            }
            Op::GatherRows(table, ids) => {
                let t = val(*table);
                let d = t.last_dim();
                let mut gt = Tensor::zeros(t.shape());
                let data = gt.data_mut();
                for (row, &i) in g.rows().zip(ids) {
                    for (o, x) in data[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::SoftmaxRows(a) => {
                let d = y.last_dim();
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let s = dot(yr, gr);
                    ga.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - s)));
                }
                self.accumulate(grads, *a, Tensor::new(y.shape(), ga).expect("shape"));
            }
            Op::LogSoftmaxRows(a) => {
                let d = y.last_dim();
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let s: f64 = gr.iter().sum();
                    ga.extend(yr.iter().zip(gr).map(|(l, q)| q - l.exp() * s));
                }
                self.accumulate(grads, *a, Tensor::new(y.shape(), ga).expect("shape"));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = y.last_dim();
                let gam = val(*gamma).data();
                if needs(*beta) {
                    self.accumulate(grads, *beta, reduce_to(g, &[d]));
                }
                if needs(*gamma) {
                    let mut gg = vec![0.0; d];
                    for (i, (q, h)) in g.data().iter().zip(xhat).enumerate() {
                        gg[i % d] += q * h;
                    }
                    self.accumulate(grads, *gamma, Tensor::vector(gg));
                }
                if needs(*x) {
                    let mut gx = Vec::with_capacity(y.len());
                    let n = d as f64;
                    for ((gr, hr), inv) in g
                        .data()
                        .chunks_exact(d)
                        .zip(xhat.chunks_exact(d))
                        .zip(inv_std)
                    {
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(q, w)| q * w).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = dot(&dh, hr);
                        gx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(a, h)| inv / n * (n * a - sum_dh - h * sum_dh_h)),
                        );
                    }
                    self.accumulate(grads, *x, Tensor::new(y.shape(), gx).expect("shape"));
                }
            }
            Op::Gelu(a) => {
                let ga = zip_broadcast(g, val(*a), g.shape().to_vec(), |q, x| q * gelu_grad(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_broadcast(g, y, g.shape().to_vec(), |q, s| q * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = zip_broadcast(g, val(*a), g.shape().to_vec(), |q, x| q * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = zip_broadcast(g, val(*a), g.shape().to_vec(), |q, x| q / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = zip_broadcast(g, y, g.shape().to_vec(), |q, e| q * e);
                self.accumulate(grads, *a, ga);
            }
            Op::Dot(a, b) => {
                let q = g.item();
                if needs(*a) {
                    self.accumulate(grads, *a, val(*b).map(|x| x * q));
                }
                if needs(*b) {
                    self.accumulate(grads, *b, val(*a).map(|x| x * q));
                }
            }
            Op::Sum(a) => self.accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let x = val(*a);
                self.accumulate(
                    grads,
                    *a,
                    Tensor::full(x.shape(), g.item() / x.len() as f64),
                );
            }
            Op::SumRows(a) => {
                let x = val(*a);
                let d = x.last_dim();
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .flat_map(|&q| std::iter::repeat_n(q, d))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape(), ga).expect("shape"));
            }
            Op::Slice(a, start) => {
                let x = val(*a);
                let inner: usize = x.shape()[1..].iter().product();
                let mut ga = Tensor::zeros(x.shape());
                ga.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let x = val(p);
                    let gp = Tensor::new(x.shape(), g.data()[offset..offset + x.len()].to_vec())
                        .expect("shape");
                    offset += x.len();
                    self.accumulate(grads, p, gp);
                }
            }
            Op::Dropout(a, mask) => {
                let ga: Vec<f64> = g.data().iter().zip(mask).map(|(q, m)| q * m).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), ga).expect("shape"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn uniform_softmax_row() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full([2, 4], 3.0));
        let y = t.softmax_rows(x).unwrap();
        for row in t.value(y).rows() {
            assert!(row.iter().all(|&p| (p - 0.25).abs() < 1e-15));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let i = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c), t.value(a));
        let ct = t.matmul_t(a, i).unwrap();
        assert_eq!(t.value(ct), t.value(a));
    }

    #[test]
    fn sum_and_dot_gradients() {
        let mut t = Tape::new();
        let x = t.param(mat(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones([2, 3]));

        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = t.constant(Tensor::vector(vec![4.0, -5.0, 6.0]));
        let d = t.dot(a, b).unwrap();
        assert_eq!(t.value(d).item(), 12.0);
        let g = t.backward(d).unwrap();
        assert_eq!(g.get(a).unwrap(), t.value(b));
        assert!(g.get(b).is_none());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros([3]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros([2, 3]));
        let b = t.param(Tensor::zeros([2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.starts_with("matmul"), "{err}");
        let c = t.param(Tensor::zeros([4]));
        let err = t.add(a, c).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, -1.0]));
        assert!(matches!(t.log(x), Err(Error::NonFinite { op: "log" })));
        let big = t.param(Tensor::scalar(1000.0));
        assert!(t.exp(big).is_err());
        // softplus stays finite where exp would overflow
        let sp = t.softplus(big).unwrap();
        assert_eq!(t.value(sp).item(), 1000.0);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut t = Tape::new();
        let mut rng = crate::rng::derive(0, &[]);
        let x = t.param(Tensor::ones([4, 4]));
        assert_eq!(t.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert_eq!(t.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        let y = t.dropout(x, 0.5, &mut rng, true).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn permute_roundtrip() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new([2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let p = t.permute(x, &[1, 2, 0]).unwrap();
        assert_eq!(t.shape(p), &[3, 4, 2]);
        // element [i,j,k] of x lands at [j,k,i]
        assert_eq!(
            t.value(p).data()[(2 * 4 + 1) * 2 + 1],
            (3 * 4 + 2 * 4 + 1) as f64
        );
        let back = t.permute(p, &[2, 0, 1]).unwrap();
        assert_eq!(t.value(back), t.value(x));
    }

    #[test]
    fn layer_norm_statistics() {
        let mut t = Tape::new();
        let x = t.constant(
            Tensor::new(
                [3, 6],
                (0..18).map(|i| (i as f64 * 1.7).sin() * 5.0).collect(),
            )
            .unwrap(),
        );
        let g = t.constant(Tensor::ones([6]));
        let b = t.constant(Tensor::zeros([6]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        for row in t.value(y).rows() {
            let m = row.iter().sum::<f64>() / 6.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }
}
