//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the node list
//! is already a topological order and backward is a single reverse sweep.
//! Parameters are referenced from a borrowed [`ParamStore`] rather than
//! copied onto the tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm_acc, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, as reported by diagnostics and gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    MatMulT,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Concat,
    Slice,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    Embedding,
    Sum,
    Mean,
    Transpose,
    Gather,
    Minimum,
    Clamp,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, usize),
    Slice {
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, Option<Rc<[bool]>>),
    LogSoftmax(Var, Option<Rc<[bool]>>),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Embedding(..) => OpKind::Embedding,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Gather(..) => OpKind::Gather,
            Op::Minimum(..) => OpKind::Minimum,
            Op::Clamp(..) => OpKind::Clamp,
        }
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<T> {
    op: Op,
    value: Value<T>,
}

/// Single-writer computation tape over a frozen parameter store.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    fault: Option<OpKind>,
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            fault: None,
        }
    }

    /// Negates the gradient flowing out of every `kind` node during
    /// backward. Exists so gradient checks can be shown to catch errors.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims(self.value(v))
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients reaching it are available through
    /// [`Graph::backward_all`].
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return shape_err(
                "matmul_t",
                format!("{:?} x {:?}ᵀ", self.shape(a), self.shape(b)),
            );
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out);
        Ok(self.push(Op::MatMulT(a, b), Tensor::new(vec![m, n], out)?))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ca != cb || (rb != ra && rb != 1) {
            return shape_err(op, format!("{:?} and {:?}", self.shape(a), self.shape(b)));
        }
        Ok(rb != ra)
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        let cols = av.cols();
        let bcast = bv.numel() != av.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if bcast { bv.data()[i % cols] } else { bv.data()[i] };
                f(x, y)
            })
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Elementwise product; `b` may be a broadcast row.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("minimum", format!("{:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let out = self.zip_broadcast(a, b, |x, y| if x <= y { x } else { y });
        Ok(self.push(Op::Minimum(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let c = T::c(s);
        let out = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, s), out)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let c = T::c(s);
        let out = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::c(lo), T::c(hi));
        let out = self.value(a).map(|x| x.max(l).min(h));
        self.push(Op::Clamp(a, lo, hi), out)
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).map(f);
        self.push(op, out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu(a), a, |x| x.max(T::zero()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, |x| x.exp())
    }

    /// Natural log; rejects non-positive inputs.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= T::zero()) {
            return Err(Error::InvalidArgument("log of non-positive value".into()));
        }
        Ok(self.unary(Op::Log(a), a, |x| x.ln()))
    }

    fn check_mask(&self, op: &'static str, a: Var, mask: Option<&[bool]>) -> Result<()> {
        if let Some(m) = mask {
            if m.len() != self.dims(a).1 {
                return shape_err(op, format!("mask of {} for {:?}", m.len(), self.shape(a)));
            }
            if !m.iter().any(|&v| v) {
                return Err(Error::InvalidArgument(format!("{op}: every entry masked")));
            }
        }
        Ok(())
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a), None);
        self.push(Op::Softmax(a, None), out)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a), None);
        self.push(Op::LogSoftmax(a, None), out)
    }

    /// Row-wise softmax restricted to entries where `mask` is true; the
    /// others are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        self.check_mask("masked_softmax", a, Some(&mask))?;
        let out = softmax_rows(self.value(a), Some(&mask));
        Ok(self.push(Op::Softmax(a, Some(mask)), out))
    }

    /// Row-wise log-softmax over unmasked entries. Masked entries hold 0
    /// (their probability is 0) and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        self.check_mask("masked_log_softmax", a, Some(&mask))?;
        let out = log_softmax_rows(self.value(a), Some(&mask));
        Ok(self.push(Op::LogSoftmax(a, Some(mask)), out))
    }

    /// Rows of `table` selected by `ids`, as an `ids.len() × d` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("embedding_lookup: no ids".into()));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    op: "embedding_lookup",
                    index: id,
                    limit: rows,
                });
            }
            out.extend_from_slice(tv.row_slice(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(Op::Embedding(table, ids.to_vec()), t))
    }

    /// Concatenation along columns (`axis = 1`) or rows (`axis = 0`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidArgument("concat: empty input or bad axis".into()));
        }
        let (r0, c0) = self.dims(parts[0]);
        if axis == 1 {
            let mut total = 0;
            for &p in parts {
                let (r, c) = self.dims(p);
                if r != r0 {
                    return shape_err("concat", format!("row counts {r0} vs {r}"));
                }
                total += c;
            }
            let mut out = Vec::with_capacity(r0 * total);
            for row in 0..r0 {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row_slice(row));
                }
            }
            let t = Tensor::new(vec![r0, total], out)?;
            Ok(self.push(Op::Concat(parts.to_vec(), 1), t))
        } else {
            let mut total = 0;
            for &p in parts {
                let (r, c) = self.dims(p);
                if c != c0 {
                    return shape_err("concat", format!("column counts {c0} vs {c}"));
                }
                total += r;
            }
            let mut out = Vec::with_capacity(total * c0);
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            let t = Tensor::new(vec![total, c0], out)?;
            Ok(self.push(Op::Concat(parts.to_vec(), 0), t))
        }
    }

    /// `len` columns (`axis = 1`) or rows (`axis = 0`) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        let limit = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > limit {
            return shape_err(
                "slice",
                format!("axis {axis} range {start}..{} of {:?}", start + len, self.shape(a)),
            );
        }
        let av = self.value(a);
        let t = if axis == 0 {
            av.slice_rows(start, len)?
        } else {
            let mut out = Vec::with_capacity(r * len);
            for row in 0..r {
                out.extend_from_slice(&av.row_slice(row)[start..start + len]);
            }
            Tensor::new(vec![r, len], out)?
        };
        Ok(self.push(Op::Slice { a, axis, start, len }, t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let n = T::c(v.numel() as f64);
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let av = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out).expect("transpose shape");
        self.push(Op::Transpose(a), t)
    }

    /// Picks `(row, col)` entries into a `1 × k` row.
    pub fn gather(&mut self, a: Var, coords: &[(usize, usize)]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if coords.is_empty() {
            return Err(Error::InvalidArgument("gather: no coordinates".into()));
        }
        let mut flat = Vec::with_capacity(coords.len());
        for &(i, j) in coords {
            if i >= r || j >= c {
                return Err(Error::Index {
                    op: "gather",
                    index: i * c + j,
                    limit: r * c,
                });
            }
            flat.push(i * c + j);
        }
        let av = self.value(a);
        let out = flat.iter().map(|&k| av.data()[k]).collect();
        let t = Tensor::row(out);
        Ok(self.push(Op::Gather(a, flat), t))
    }

    /// Parameter gradients of a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node_grads = self.backward_all(loss)?;
        let mut grads = Gradients::empty(self.params.len());
        for (node, g) in self.nodes.iter().zip(node_grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                grads.accumulate(*id, g);
            }
        }
        Ok(grads)
    }

    /// Gradients of a scalar `loss` with respect to every node on the tape.
    pub fn backward_all(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.fault.is_some_and(|k| k == self.nodes[idx].op.kind()) {
                self.propagate(idx, &g.map(|x| -x), &mut grads);
            } else {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = match &self.nodes[idx].value {
            Value::Owned(t) => t,
            Value::Param(_) => return,
        };
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = dims(av);
                let n = bv.cols();
                let mut ga = vec![T::zero(); m * k];
                gemm_acc(m, n, k, g.data(), false, bv.data(), true, &mut ga);
                let mut gb = vec![T::zero(); k * n];
                gemm_acc(k, m, n, av.data(), true, g.data(), false, &mut gb);
                acc(*a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
            }
            Op::MatMulT(a, b) => {
                // out = a·bᵀ: ga = g·b, gb = gᵀ·a
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = dims(av);
                let n = bv.rows();
                let mut ga = vec![T::zero(); m * k];
                gemm_acc(m, n, k, g.data(), false, bv.data(), false, &mut ga);
                let mut gb = vec![T::zero(); n * k];
                gemm_acc(n, m, k, g.data(), true, av.data(), false, &mut gb);
                acc(*a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(self.nodes[idx].op, Op::Sub(..));
                acc(*a, g.clone());
                let bv = self.value(*b);
                let mut gb = reduce_broadcast(g, bv);
                if neg {
                    gb.scale_assign(-T::one());
                }
                acc(*b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let bcast = bv.numel() != av.numel();
                let ga: Vec<T> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| gi * if bcast { bv.data()[i % cols] } else { bv.data()[i] })
                    .collect();
                let full_gb = Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(av.data()).map(|(&gi, &x)| gi * x).collect(),
                )
                .expect("shape");
                acc(*a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                acc(*b, reduce_broadcast(&full_gb, bv));
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = vec![T::zero(); g.numel()];
                let mut gb = vec![T::zero(); g.numel()];
                for i in 0..g.numel() {
                    if av.data()[i] <= bv.data()[i] {
                        ga[i] = g.data()[i];
                    } else {
                        gb[i] = g.data()[i];
                    }
                }
                acc(*a, Tensor::new(av.shape().to_vec(), ga).expect("shape"));
                acc(*b, Tensor::new(bv.shape().to_vec(), gb).expect("shape"));
            }
            Op::Scale(a, s) => {
                let c = T::c(*s);
                acc(*a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let (l, h) = (T::c(*lo), T::c(*hi));
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| if x >= l && x <= h { gi } else { T::zero() })
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Op::Tanh(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * (T::one() - y * y))
                    .collect();
                acc(*a, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * y * (T::one() - y))
                    .collect();
                acc(*a, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&gi, &x)| if x > T::zero() { gi } else { T::zero() })
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Op::Exp(a) => {
                let data = g.data().iter().zip(out.data()).map(|(&gi, &y)| gi * y).collect();
                acc(*a, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Log(a) => {
                let av = self.value(*a);
                let data = g.data().iter().zip(av.data()).map(|(&gi, &x)| gi / x).collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Op::Softmax(a, mask) => {
                let cols = out.cols();
                let mut data = vec![T::zero(); out.numel()];
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: T = y.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                    for j in 0..cols {
                        if mask.as_ref().is_none_or(|m| m[j]) {
                            data[r * cols + j] = y[j] * (gr[j] - dot);
                        }
                    }
                }
                acc(*a, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::LogSoftmax(a, mask) => {
                let cols = out.cols();
                let valid = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
                let mut data = vec![T::zero(); out.numel()];
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let gsum: T = (0..cols).filter(|&j| valid(j)).map(|j| gr[j]).sum();
                    for j in 0..cols {
                        if valid(j) {
                            data[r * cols + j] = gr[j] - y[j].exp() * gsum;
                        }
                    }
                }
                acc(*a, Tensor::new(out.shape().to_vec(), data).expect("shape"));
            }
            Op::Embedding(table, ids) => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut gt = Tensor::zeros(tv.shape());
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * d..(id + 1) * d];
                    for (x, &gi) in dst.iter_mut().zip(g.row_slice(row)) {
                        *x += gi;
                    }
                }
                acc(*table, gt);
            }
            Op::Concat(parts, axis) => {
                if *axis == 1 {
                    let rows = out.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        acc(p, Tensor::new(self.shape(p).to_vec(), data).expect("shape"));
                    }
                } else {
                    let cols = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        let data = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        debug_assert_eq!(n % cols, 0);
                        acc(p, Tensor::new(self.shape(p).to_vec(), data).expect("shape"));
                    }
                }
            }
            Op::Slice { a, axis, start, len } => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                let cols = av.cols();
                if *axis == 0 {
                    ga.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                } else {
                    for r in 0..av.rows() {
                        ga.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(g.row_slice(r));
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::full(av.shape(), g.item()));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = T::c(av.numel() as f64);
                acc(*a, Tensor::full(av.shape(), g.item() / n));
            }
            Op::Transpose(a) => {
                let (r, c) = (g.rows(), g.cols());
                let mut data = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[j * r + i] = g.data()[i * c + j];
                    }
                }
                acc(*a, Tensor::new(vec![c, r], data).expect("shape"));
            }
            Op::Gather(a, flat) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (i, &k) in flat.iter().enumerate() {
                    ga.data_mut()[k] += g.data()[i];
                }
                acc(*a, ga);
            }
        }
    }
}

/// Sums a full-shape gradient down to the shape of a possibly broadcast row.
fn reduce_broadcast<T: Scalar>(g: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if target.numel() == g.numel() {
        return Tensor::new(target.shape().to_vec(), g.data().to_vec()).expect("shape");
    }
    let cols = g.cols();
    let mut out = vec![T::zero(); cols];
    for r in 0..g.rows() {
        for (o, &x) in out.iter_mut().zip(g.row_slice(r)) {
            *o += x;
        }
    }
    Tensor::new(target.shape().to_vec(), out).expect("shape")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_rows<T: Scalar>(t: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let cols = t.cols();
    let mut out = vec![T::zero(); t.numel()];
    let valid = |j: usize| mask.is_none_or(|m| m[j]);
    for r in 0..t.rows() {
        let row = t.row_slice(r);
        let max = (0..cols)
            .filter(|&j| valid(j))
            .map(|j| row[j])
            .fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for j in 0..cols {
            if valid(j) {
                let e = (row[j] - max).exp();
                out[r * cols + j] = e;
                z += e;
            }
        }
        for v in &mut out[r * cols..(r + 1) * cols] {
            *v = *v / z;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape")
}

pub(crate) fn log_softmax_rows<T: Scalar>(t: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let cols = t.cols();
    let mut out = vec![T::zero(); t.numel()];
    let valid = |j: usize| mask.is_none_or(|m| m[j]);
    for r in 0..t.rows() {
        let row = t.row_slice(r);
        let max = (0..cols)
            .filter(|&j| valid(j))
            .map(|j| row[j])
            .fold(T::neg_infinity(), T::max);
        let z: T = (0..cols)
            .filter(|&j| valid(j))
            .map(|j| (row[j] - max).exp())
            .sum();
        let lz = max + z.ln();
        for j in 0..cols {
            if valid(j) {
                out[r * cols + j] = row[j] - lz;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape")
}
