//! Eager single-tape reverse-mode differentiation.
//!
//! Every forward op computes immediately and records itself; `backward`
//! replays the tape in exact reverse order. Handles are plain indices into
//! the tape's node arena.

use rayon::prelude::*;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

const LN_EPS: f64 = 1e-5;
const BCE_CLAMP: f64 = 1e-7;
/// Work threshold above which matmul fans rows out to the rayon pool.
const PAR_FLOPS: usize = 1 << 20;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddScalar { a: usize },
    BroadcastTo { a: usize },
    Relu { a: usize },
    Sigmoid { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Softplus { a: usize },
    ClampMin { a: usize, min: f64 },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    LogSumExp { a: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize },
    Embedding { table: usize, indices: Vec<usize> },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize, len: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    SumAxis { a: usize, axis: usize },
    MaxPool { a: usize, axis: usize, argmax: Vec<usize> },
    Conv2d { input: usize, kernel: usize, stride: usize },
    Bce { probs: usize, targets: usize },
    LinComb { tokens: usize, rows: Vec<Vec<(usize, f64)>> },
    StraightThrough { a: usize },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires: bool,
    op: Op,
    param: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_memo: std::collections::HashMap<String, ValueId>,
    first_nonfinite: Option<(usize, &'static str)>,
}

// ── construction and accessors ──────────────────────────────────────

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires: bool, op: Op) -> ValueId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if self.first_nonfinite.is_none() && data.iter().any(|v| !v.is_finite()) {
            self.first_nonfinite = Some((self.nodes.len(), op_name(&op)));
        }
        self.nodes.push(Node { data, shape, grad: None, requires, op, param: None });
        ValueId(self.nodes.len() - 1)
    }

    /// Untracked constant leaf.
    pub fn value(&mut self, shape: Vec<usize>, data: Vec<f64>) -> ValueId {
        self.push(data, shape, false, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.value(vec![1], vec![v])
    }

    /// Gradient-tracked leaf that is not a named parameter.
    pub fn var(&mut self, shape: Vec<usize>, data: Vec<f64>) -> ValueId {
        self.push(data, shape, true, Op::Leaf)
    }

    /// Leaf bound to a named parameter; its gradient is written back into the
    /// store by `backward`. Repeated lookups of one name reuse the same node.
    pub fn param(&mut self, name: &str, store: &ParamStore) -> ValueId {
        if let Some(&id) = self.param_memo.get(name) {
            return id;
        }
        let t = store.get(name);
        let id = self.push(t.data.clone(), t.shape.clone(), t.requires_grad, Op::Leaf);
        self.nodes[id.0].param = Some(name.to_string());
        self.param_memo.insert(name.to_string(), id);
        id
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> ValueId {
        self.push(t.data.clone(), t.shape.clone(), t.requires_grad, Op::Leaf)
    }

    pub fn data(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op that produced a NaN/Inf, if any.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some((idx, name)) => Err(Error::Numeric(format!(
                "non-finite output at tape node {idx} (op {name})"
            ))),
        }
    }

    fn req(&self, a: usize) -> bool {
        self.nodes[a].requires
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::AddScalar { .. } => "add_scalar",
        Op::BroadcastTo { .. } => "broadcast_to",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::Softplus { .. } => "softplus",
        Op::ClampMin { .. } => "clamp_min",
        Op::Softmax { .. } => "softmax",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::LogSumExp { .. } => "logsumexp",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Embedding { .. } => "embedding",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape { .. } => "reshape",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::SumAxis { .. } => "sum_axis",
        Op::MaxPool { .. } => "max_pool",
        Op::Conv2d { .. } => "conv2d",
        Op::Bce { .. } => "bce",
        Op::LinComb { .. } => "lin_comb",
        Op::StraightThrough { .. } => "straight_through",
    }
}

// ── shape helpers ────────────────────────────────────────────────────

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "shapes {a:?} and {b:?} do not broadcast"
        );
        out[i] = da.max(db);
    }
    out
}

fn pad_left(shape: &[usize], nd: usize) -> Vec<usize> {
    let mut p = vec![1usize; nd];
    p[nd - shape.len()..].copy_from_slice(shape);
    p
}

/// Expand `data` of `from` shape to `to` shape by broadcasting.
fn expand_to(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return data.to_vec();
    }
    let nd = to.len();
    let fp = pad_left(from, nd);
    let numel: usize = to.iter().product();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..nd).rev() {
        strides[d] = if fp[d] == 1 { 0 } else { s };
        s *= fp[d];
    }
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; nd];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..nd).rev() {
            coords[d] = rem % to[d];
            rem /= to[d];
        }
        let src: usize = coords.iter().zip(&strides).map(|(c, st)| c * st).sum();
        *slot = data[src];
    }
    out
}

/// Sum a gradient in `from` shape down to `to` shape (inverse of broadcast).
fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let nd = from.len();
    let tp = pad_left(to, nd);
    let numel: usize = to.iter().product();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..nd).rev() {
        strides[d] = if tp[d] == 1 { 0 } else { s };
        s *= tp[d];
    }
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; nd];
    for (flat, &g) in grad.iter().enumerate() {
        let mut rem = flat;
        for d in (0..nd).rev() {
            coords[d] = rem % from[d];
            rem /= from[d];
        }
        let dst: usize = coords.iter().zip(&strides).map(|(c, st)| c * st).sum();
        out[dst] += g;
    }
    out
}

/// Row-major matmul A[m,k] @ B[k,n]; rows fan out to rayon when large.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let work = m * k * n;
    let body = |i: usize, row: &mut [f64]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if work >= PAR_FLOPS && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    c
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().expect("op needs at least 1-D input");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    (rows, last)
}

/// Shape with `axis` removed; scalars collapse to `[1]`.
fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

// ── forward ops ──────────────────────────────────────────────────────

impl Tape {
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs 2-D operands");
        let (m, k) = (sa[0], sa[1]);
        assert_eq!(sb[0], k, "matmul inner dims {} vs {}", k, sb[0]);
        let n = sb[1];
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let req = self.req(a.0) || self.req(b.0);
        self.push(data, vec![m, n], req, Op::Matmul { a: a.0, b: b.0 })
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let s = &self.nodes[a.0].shape;
        assert_eq!(s.len(), 2, "transpose needs a 2-D operand");
        let (r, c) = (s[0], s[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let req = self.req(a.0);
        self.push(data, vec![c, r], req, Op::Transpose { a: a.0 })
    }

    fn binary(&mut self, a: ValueId, b: ValueId, f: impl Fn(f64, f64) -> f64, op: Op) -> ValueId {
        let out_shape = broadcast_shapes(&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let ae = expand_to(&self.nodes[a.0].data, &self.nodes[a.0].shape, &out_shape);
        let be = expand_to(&self.nodes[b.0].data, &self.nodes[b.0].shape, &out_shape);
        let data = ae.iter().zip(&be).map(|(x, y)| f(*x, *y)).collect();
        let req = self.req(a.0) || self.req(b.0);
        self.push(data, out_shape, req, op)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.binary(a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let data = self.nodes[a.0].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: ValueId, c: f64) -> ValueId {
        let data = self.nodes[a.0].data.iter().map(|v| v + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, Op::AddScalar { a: a.0 })
    }

    pub fn broadcast_to(&mut self, a: ValueId, shape: Vec<usize>) -> ValueId {
        let data = expand_to(&self.nodes[a.0].data, &self.nodes[a.0].shape, &shape);
        let req = self.req(a.0);
        self.push(data, shape, req, Op::BroadcastTo { a: a.0 })
    }

    fn unary(&mut self, a: ValueId, f: impl Fn(f64) -> f64, op: Op) -> ValueId {
        let data = self.nodes[a.0].data.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, op)
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        self.unary(a, |v| v.max(0.0), Op::Relu { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        self.unary(a, sigmoid, Op::Sigmoid { a: a.0 })
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        self.unary(a, f64::exp, Op::Exp { a: a.0 })
    }

    pub fn log(&mut self, a: ValueId) -> ValueId {
        self.unary(a, f64::ln, Op::Log { a: a.0 })
    }

    /// log(1 + e^x), computed without overflow.
    pub fn softplus(&mut self, a: ValueId) -> ValueId {
        self.unary(a, softplus, Op::Softplus { a: a.0 })
    }

    pub fn clamp_min(&mut self, a: ValueId, min: f64) -> ValueId {
        self.unary(a, |v| v.max(min), Op::ClampMin { a: a.0, min })
    }

    /// Softmax over the last axis, row max subtracted for stability.
    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let (rows, cols) = split_last(&self.nodes[a.0].shape);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in &mut data[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, Op::Softmax { a: a.0 })
    }

    pub fn log_softmax(&mut self, a: ValueId) -> ValueId {
        let (rows, cols) = split_last(&self.nodes[a.0].shape);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (o, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, Op::LogSoftmax { a: a.0 })
    }

    /// Log-sum-exp reduction over the last axis.
    pub fn logsumexp(&mut self, a: ValueId) -> ValueId {
        let (rows, cols) = split_last(&self.nodes[a.0].shape);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            data[r] = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        }
        let shape = drop_axis(&self.nodes[a.0].shape, self.nodes[a.0].shape.len() - 1);
        let req = self.req(a.0);
        self.push(data, shape, req, Op::LogSumExp { a: a.0 })
    }

    /// Layer norm over the last axis with affine terms. Zero-variance rows
    /// normalize to zero (variance floored by eps).
    pub fn layer_norm(&mut self, a: ValueId, gamma: ValueId, beta: ValueId) -> ValueId {
        let (rows, cols) = split_last(&self.nodes[a.0].shape);
        assert_eq!(self.nodes[gamma.0].data.len(), cols, "layer_norm gamma width");
        assert_eq!(self.nodes[beta.0].data.len(), cols, "layer_norm beta width");
        let src = &self.nodes[a.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..cols {
                data[r * cols + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0) || self.req(gamma.0) || self.req(beta.0);
        self.push(data, shape, req, Op::LayerNorm { a: a.0, gamma: gamma.0, beta: beta.0 })
    }

    /// Row-select from a [V, C] table.
    pub fn embedding(&mut self, table: ValueId, indices: &[usize]) -> ValueId {
        let s = &self.nodes[table.0].shape;
        assert_eq!(s.len(), 2, "embedding table must be 2-D");
        let (v, c) = (s[0], s[1]);
        let src = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(i < v, "embedding index {i} out of range {v}");
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let req = self.req(table.0);
        self.push(
            data,
            vec![indices.len(), c],
            req,
            Op::Embedding { table: table.0, indices: indices.to_vec() },
        )
    }

    pub fn concat(&mut self, inputs: &[ValueId], axis: usize) -> ValueId {
        assert!(!inputs.is_empty(), "concat needs at least one input");
        let base = self.nodes[inputs[0].0].shape.clone();
        assert!(axis < base.len(), "concat axis {axis} out of range");
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for id in inputs {
            let s = &self.nodes[id.0].shape;
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&base).enumerate() {
                if d != axis {
                    assert_eq!(x, y, "concat shape mismatch on axis {d}");
                }
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = vec![0.0; out_shape.iter().product()];
        let total_mid = out_shape[axis];
        let mut offset = 0;
        for id in inputs {
            let s = &self.nodes[id.0].shape;
            let mid = s[axis];
            let src = &self.nodes[id.0].data;
            for o in 0..outer {
                for m in 0..mid {
                    let src_base = (o * mid + m) * inner;
                    let dst_base = (o * total_mid + offset + m) * inner;
                    data[dst_base..dst_base + inner]
                        .copy_from_slice(&src[src_base..src_base + inner]);
                }
            }
            offset += mid;
        }
        let req = inputs.iter().any(|id| self.req(id.0));
        let op = Op::Concat { inputs: inputs.iter().map(|i| i.0).collect(), axis };
        self.push(data, out_shape, req, op)
    }

    pub fn slice(&mut self, a: ValueId, axis: usize, start: usize, len: usize) -> ValueId {
        let s = self.nodes[a.0].shape.clone();
        assert!(axis < s.len(), "slice axis out of range");
        assert!(start + len <= s[axis], "slice range {start}+{len} exceeds {}", s[axis]);
        let (outer, mid, inner) = axis_split(&s, axis);
        let src = &self.nodes[a.0].data;
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for m in 0..len {
                let src_base = (o * mid + start + m) * inner;
                let dst_base = (o * len + m) * inner;
                data[dst_base..dst_base + inner].copy_from_slice(&src[src_base..src_base + inner]);
            }
        }
        let req = self.req(a.0);
        self.push(data, out_shape, req, Op::Slice { a: a.0, axis, start, len })
    }

    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> ValueId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[a.0].data.len(),
            "reshape numel mismatch"
        );
        let data = self.nodes[a.0].data.clone();
        let req = self.req(a.0);
        self.push(data, shape, req, Op::Reshape { a: a.0 })
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = self.nodes[a.0].data.iter().sum();
        let req = self.req(a.0);
        self.push(vec![v], vec![1], req, Op::Sum { a: a.0 })
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let n = self.nodes[a.0].data.len().max(1);
        let v = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        let req = self.req(a.0);
        self.push(vec![v], vec![1], req, Op::Mean { a: a.0 })
    }

    pub fn sum_axis(&mut self, a: ValueId, axis: usize) -> ValueId {
        let s = self.nodes[a.0].shape.clone();
        let (outer, mid, inner) = axis_split(&s, axis);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * mid + m) * inner + i];
                }
            }
        }
        let req = self.req(a.0);
        self.push(data, drop_axis(&s, axis), req, Op::SumAxis { a: a.0, axis })
    }

    pub fn mean_axis(&mut self, a: ValueId, axis: usize) -> ValueId {
        let mid = self.nodes[a.0].shape[axis];
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / mid as f64)
    }

    /// Max reduction over one axis; ties pick the lowest index.
    pub fn max_pool(&mut self, a: ValueId, axis: usize) -> ValueId {
        let s = self.nodes[a.0].shape.clone();
        let (outer, mid, inner) = axis_split(&s, axis);
        assert!(mid > 0, "max_pool over an empty axis");
        let src = &self.nodes[a.0].data;
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                for i in 0..inner {
                    let v = src[(o * mid + m) * inner + i];
                    let slot = o * inner + i;
                    if v > data[slot] {
                        data[slot] = v;
                        argmax[slot] = m;
                    }
                }
            }
        }
        let req = self.req(a.0);
        self.push(data, drop_axis(&s, axis), req, Op::MaxPool { a: a.0, axis, argmax })
    }

    /// Valid (unpadded) 2-D convolution; input [Cin,H,W], kernel
    /// [Cout,Cin,kh,kw], output [Cout,Ho,Wo].
    pub fn conv2d(&mut self, input: ValueId, kernel: ValueId, stride: usize) -> ValueId {
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let si = self.nodes[input.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        assert_eq!(si.len(), 3, "conv2d input must be [Cin,H,W]");
        assert_eq!(sk.len(), 4, "conv2d kernel must be [Cout,Cin,kh,kw]");
        let (cin, h, w) = (si[0], si[1], si[2]);
        let (cout, kcin, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        assert_eq!(cin, kcin, "conv2d channel mismatch");
        assert!(h >= kh && w >= kw, "conv2d kernel larger than input");
        let ho = (h - kh) / stride + 1;
        let wo = (w - kw) / stride + 1;
        let x = &self.nodes[input.0].data;
        let k = &self.nodes[kernel.0].data;
        let mut data = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            let xrow = ci * h * w + iy * w + ox * stride;
                            let krow = ((co * cin + ci) * kh + ky) * kw;
                            for kx in 0..kw {
                                acc += x[xrow + kx] * k[krow + kx];
                            }
                        }
                    }
                    data[co * ho * wo + oy * wo + ox] = acc;
                }
            }
        }
        let req = self.req(input.0) || self.req(kernel.0);
        self.push(
            data,
            vec![cout, ho, wo],
            req,
            Op::Conv2d { input: input.0, kernel: kernel.0, stride },
        )
    }

    /// Mean binary cross-entropy between probabilities and {0,1} targets.
    /// Probabilities are clamped to [1e-7, 1-1e-7].
    pub fn bce(&mut self, probs: ValueId, targets: ValueId) -> ValueId {
        assert_eq!(
            self.nodes[probs.0].data.len(),
            self.nodes[targets.0].data.len(),
            "bce length mismatch"
        );
        let p = &self.nodes[probs.0].data;
        let t = &self.nodes[targets.0].data;
        let n = p.len() as f64;
        let mut acc = 0.0;
        for (&pv, &tv) in p.iter().zip(t) {
            let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            acc -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        }
        let req = self.req(probs.0);
        self.push(vec![acc / n], vec![1], req, Op::Bce { probs: probs.0, targets: targets.0 })
    }

    /// Sparse linear combination of token rows: out[q] = sum_i w_qi * tokens[i].
    /// The weights are data, not differentiated.
    pub fn lin_comb(&mut self, tokens: ValueId, rows: Vec<Vec<(usize, f64)>>) -> ValueId {
        let s = &self.nodes[tokens.0].shape;
        assert_eq!(s.len(), 2, "lin_comb tokens must be [M,C]");
        let (m, c) = (s[0], s[1]);
        let src = &self.nodes[tokens.0].data;
        let mut data = vec![0.0; rows.len() * c];
        for (q, row) in rows.iter().enumerate() {
            for &(i, wgt) in row {
                assert!(i < m, "lin_comb token index {i} out of range {m}");
                let dst = &mut data[q * c..(q + 1) * c];
                let srow = &src[i * c..(i + 1) * c];
                for (d, sv) in dst.iter_mut().zip(srow) {
                    *d += wgt * sv;
                }
            }
        }
        let q = rows.len();
        let req = self.req(tokens.0);
        self.push(data, vec![q, c], req, Op::LinComb { tokens: tokens.0, rows })
    }

    /// Forward: emit `replacement`; backward: pass the gradient through to
    /// `a` unchanged. The straight-through estimator used by quantization.
    pub fn straight_through(&mut self, a: ValueId, replacement: Vec<f64>) -> ValueId {
        assert_eq!(
            replacement.len(),
            self.nodes[a.0].data.len(),
            "straight_through length mismatch"
        );
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a.0);
        self.push(replacement, shape, req, Op::StraightThrough { a: a.0 })
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

// ── backward ─────────────────────────────────────────────────────────

impl Tape {
    fn accum(&mut self, idx: usize, g: &[f64]) {
        if !self.nodes[idx].requires {
            return;
        }
        let n = self.nodes[idx].data.len();
        assert_eq!(g.len(), n, "gradient length mismatch at node {idx}");
        match &mut self.nodes[idx].grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => self.nodes[idx].grad = Some(g.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Populates gradients on every
    /// grad-tracked node and accumulates parameter gradients into `store`.
    pub fn backward(&mut self, loss: ValueId, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.ensure_finite()?;
        self.accum(loss.0, &[1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.clone() else { continue };
            let op = self.nodes[idx].op.clone();
            self.backward_op(idx, &grad, &op);
        }

        // Write parameter gradients back into the store.
        for idx in 0..self.nodes.len() {
            if let (Some(name), Some(g)) = (self.nodes[idx].param.clone(), self.nodes[idx].grad.clone()) {
                let t = store.get_mut(&name);
                t.accumulate_grad(&g);
                if let Some(buf) = &t.grad {
                    if buf.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!("non-finite gradient for {name:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_op(&mut self, idx: usize, grad: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                if self.req(*a) {
                    // dA = g @ B^T
                    let bd = &self.nodes[*b].data;
                    let mut bt = vec![0.0; n * k];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bd[i * n + j];
                        }
                    }
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.accum(*a, &da);
                }
                if self.req(*b) {
                    // dB = A^T @ g
                    let ad = &self.nodes[*a].data;
                    let mut at = vec![0.0; k * m];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = ad[i * k + j];
                        }
                    }
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.accum(*b, &db);
                }
            }

            Op::Transpose { a } => {
                let (r, c) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] = grad[i * r + j];
                    }
                }
                self.accum(*a, &da);
            }

            Op::Add { a, b } => {
                let out_shape = self.nodes[idx].shape.clone();
                if self.req(*a) {
                    let da = reduce_to_shape(grad, &out_shape, &self.nodes[*a].shape.clone());
                    self.accum(*a, &da);
                }
                if self.req(*b) {
                    let db = reduce_to_shape(grad, &out_shape, &self.nodes[*b].shape.clone());
                    self.accum(*b, &db);
                }
            }

            Op::Sub { a, b } => {
                let out_shape = self.nodes[idx].shape.clone();
                if self.req(*a) {
                    let da = reduce_to_shape(grad, &out_shape, &self.nodes[*a].shape.clone());
                    self.accum(*a, &da);
                }
                if self.req(*b) {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    let db = reduce_to_shape(&neg, &out_shape, &self.nodes[*b].shape.clone());
                    self.accum(*b, &db);
                }
            }

            Op::Mul { a, b } => {
                let out_shape = self.nodes[idx].shape.clone();
                let ae = expand_to(&self.nodes[*a].data, &self.nodes[*a].shape, &out_shape);
                let be = expand_to(&self.nodes[*b].data, &self.nodes[*b].shape, &out_shape);
                if self.req(*a) {
                    let full: Vec<f64> = grad.iter().zip(&be).map(|(g, y)| g * y).collect();
                    let da = reduce_to_shape(&full, &out_shape, &self.nodes[*a].shape.clone());
                    self.accum(*a, &da);
                }
                if self.req(*b) {
                    let full: Vec<f64> = grad.iter().zip(&ae).map(|(g, x)| g * x).collect();
                    let db = reduce_to_shape(&full, &out_shape, &self.nodes[*b].shape.clone());
                    self.accum(*b, &db);
                }
            }

            Op::Scale { a, c } => {
                let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                self.accum(*a, &da);
            }

            Op::AddScalar { a } => self.accum(*a, grad),

            Op::BroadcastTo { a } => {
                let da = reduce_to_shape(
                    grad,
                    &self.nodes[idx].shape.clone(),
                    &self.nodes[*a].shape.clone(),
                );
                self.accum(*a, &da);
            }

            Op::Relu { a } => {
                let da: Vec<f64> = self.nodes[*a]
                    .data
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accum(*a, &da);
            }

            Op::Sigmoid { a } => {
                let y = &self.nodes[idx].data;
                let da: Vec<f64> = y.iter().zip(grad).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                self.accum(*a, &da);
            }

            Op::Exp { a } => {
                let y = &self.nodes[idx].data;
                let da: Vec<f64> = y.iter().zip(grad).map(|(&y, &g)| g * y).collect();
                self.accum(*a, &da);
            }

            Op::Log { a } => {
                let x = &self.nodes[*a].data;
                let da: Vec<f64> = x.iter().zip(grad).map(|(&x, &g)| g / x).collect();
                self.accum(*a, &da);
            }

            Op::Softplus { a } => {
                let x = &self.nodes[*a].data;
                let da: Vec<f64> = x.iter().zip(grad).map(|(&x, &g)| g * sigmoid(x)).collect();
                self.accum(*a, &da);
            }

            Op::ClampMin { a, min } => {
                let x = &self.nodes[*a].data;
                let da: Vec<f64> = x
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| if x >= *min { g } else { 0.0 })
                    .collect();
                self.accum(*a, &da);
            }

            Op::Softmax { a } => {
                let (rows, cols) = split_last(&self.nodes[idx].shape);
                let y = &self.nodes[idx].data;
                let mut da = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &grad[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..cols {
                        da[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(*a, &da);
            }

            Op::LogSoftmax { a } => {
                let (rows, cols) = split_last(&self.nodes[idx].shape);
                let y = &self.nodes[idx].data;
                let mut da = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &grad[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..cols {
                        da[r * cols + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                self.accum(*a, &da);
            }

            Op::LogSumExp { a } => {
                let (rows, cols) = split_last(&self.nodes[*a].shape);
                let x = &self.nodes[*a].data;
                let out = &self.nodes[idx].data;
                let mut da = vec![0.0; x.len()];
                for r in 0..rows {
                    for j in 0..cols {
                        da[r * cols + j] = grad[r] * (x[r * cols + j] - out[r]).exp();
                    }
                }
                self.accum(*a, &da);
            }

            Op::LayerNorm { a, gamma, beta } => {
                let (rows, cols) = split_last(&self.nodes[*a].shape);
                let x = &self.nodes[*a].data;
                let g = &self.nodes[*gamma].data;
                let mut da = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    let row = &x[r * cols..(r + 1) * cols];
                    let gr = &grad[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var =
                        row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dxhat: Vec<f64> = gr.iter().zip(g).map(|(&gv, &ga)| gv * ga).collect();
                    let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                    let m2 =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        da[r * cols + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                }
                self.accum(*a, &da);
                self.accum(*gamma, &dgamma);
                self.accum(*beta, &dbeta);
            }

            Op::Embedding { table, indices } => {
                let c = self.nodes[*table].shape[1];
                let mut dt = vec![0.0; self.nodes[*table].data.len()];
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        dt[i * c + j] += grad[row * c + j];
                    }
                }
                self.accum(*table, &dt);
            }

            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[idx].shape.clone();
                let (outer, total_mid, inner) = axis_split(&out_shape, *axis);
                let mut offset = 0;
                for &inp in inputs {
                    let mid = self.nodes[inp].shape[*axis];
                    if self.req(inp) {
                        let mut di = vec![0.0; self.nodes[inp].data.len()];
                        for o in 0..outer {
                            for m in 0..mid {
                                let src_base = (o * total_mid + offset + m) * inner;
                                let dst_base = (o * mid + m) * inner;
                                di[dst_base..dst_base + inner]
                                    .copy_from_slice(&grad[src_base..src_base + inner]);
                            }
                        }
                        self.accum(inp, &di);
                    }
                    offset += mid;
                }
            }

            Op::Slice { a, axis, start, len } => {
                let s = self.nodes[*a].shape.clone();
                let (outer, mid, inner) = axis_split(&s, *axis);
                let mut da = vec![0.0; self.nodes[*a].data.len()];
                for o in 0..outer {
                    for m in 0..*len {
                        let dst_base = (o * mid + start + m) * inner;
                        let src_base = (o * len + m) * inner;
                        da[dst_base..dst_base + inner]
                            .copy_from_slice(&grad[src_base..src_base + inner]);
                    }
                }
                self.accum(*a, &da);
            }

            Op::Reshape { a } => self.accum(*a, grad),

            Op::Sum { a } => {
                let da = vec![grad[0]; self.nodes[*a].data.len()];
                self.accum(*a, &da);
            }

            Op::Mean { a } => {
                let n = self.nodes[*a].data.len().max(1);
                let da = vec![grad[0] / n as f64; self.nodes[*a].data.len()];
                self.accum(*a, &da);
            }

            Op::SumAxis { a, axis } => {
                let s = self.nodes[*a].shape.clone();
                let (outer, mid, inner) = axis_split(&s, *axis);
                let mut da = vec![0.0; self.nodes[*a].data.len()];
                for o in 0..outer {
                    for m in 0..mid {
                        for i in 0..inner {
                            da[(o * mid + m) * inner + i] = grad[o * inner + i];
                        }
                    }
                }
                self.accum(*a, &da);
            }

            Op::MaxPool { a, axis, argmax } => {
                let s = self.nodes[*a].shape.clone();
                let (outer, mid, inner) = axis_split(&s, *axis);
                let mut da = vec![0.0; self.nodes[*a].data.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let m = argmax[o * inner + i];
                        da[(o * mid + m) * inner + i] = grad[o * inner + i];
                    }
                }
                self.accum(*a, &da);
            }

            Op::Conv2d { input, kernel, stride } => {
                let si = self.nodes[*input].shape.clone();
                let sk = self.nodes[*kernel].shape.clone();
                let (cin, h, w) = (si[0], si[1], si[2]);
                let (cout, _, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
                let ho = (h - kh) / stride + 1;
                let wo = (w - kw) / stride + 1;
                let x = self.nodes[*input].data.clone();
                let k = self.nodes[*kernel].data.clone();
                if self.req(*input) {
                    let mut dx = vec![0.0; x.len()];
                    for co in 0..cout {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = grad[co * ho * wo + oy * wo + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        let xrow = ci * h * w + iy * w + ox * stride;
                                        let krow = ((co * cin + ci) * kh + ky) * kw;
                                        for kx in 0..kw {
                                            dx[xrow + kx] += g * k[krow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accum(*input, &dx);
                }
                if self.req(*kernel) {
                    let mut dk = vec![0.0; k.len()];
                    for co in 0..cout {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = grad[co * ho * wo + oy * wo + ox];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        let xrow = ci * h * w + iy * w + ox * stride;
                                        let krow = ((co * cin + ci) * kh + ky) * kw;
                                        for kx in 0..kw {
                                            dk[krow + kx] += g * x[xrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accum(*kernel, &dk);
                }
            }

            Op::Bce { probs, targets } => {
                let p = &self.nodes[*probs].data;
                let t = &self.nodes[*targets].data;
                let n = p.len() as f64;
                let g = grad[0];
                let da: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .map(|(&pv, &tv)| {
                        let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        g * (pc - tv) / (pc * (1.0 - pc)) / n
                    })
                    .collect();
                self.accum(*probs, &da);
            }

            Op::LinComb { tokens, rows } => {
                let c = self.nodes[*tokens].shape[1];
                let mut dt = vec![0.0; self.nodes[*tokens].data.len()];
                for (q, row) in rows.iter().enumerate() {
                    for &(i, wgt) in row {
                        for j in 0..c {
                            dt[i * c + j] += wgt * grad[q * c + j];
                        }
                    }
                }
                self.accum(*tokens, &dt);
            }

            Op::StraightThrough { a } => self.accum(*a, grad),
        }
    }
}
