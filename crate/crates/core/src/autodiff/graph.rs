use std::collections::BTreeMap;

use super::tensor::log_sum_exp;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        ranges: Vec<(usize, usize)>,
    },
    Reshape(Var),
    Sum(Var),
    Softmax(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::Concat(..) => "concat",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentMean { .. } => "segment_mean",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Softmax(..) => "softmax",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::BceLogits { .. } => "bce_logits",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    param: Option<ParamId>,
}

/// Gradients of a scalar loss with respect to the parameters that were
/// placed on the graph. Parameters absent from the graph have no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    by_param: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Tensor::is_finite)
    }
}

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order. A graph is built per batch and discarded afterwards.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: BTreeMap<ParamId, Var>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Operation name that produced `v`.
    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    /// Input node ids of `v`, in operand order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddScalar(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Softmax(a) => vec![*a],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Concat(xs) | Op::ConcatRows(xs) => xs.clone(),
            Op::SliceCols { x, .. } | Op::GatherRows { x, .. } | Op::SegmentMean { x, .. } => {
                vec![*x]
            }
            Op::SoftmaxXent { logits, .. } | Op::BceLogits { logits, .. } => vec![*logits],
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Places a parameter on the graph. Repeated calls for the same id
    /// return the same node, so all uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(Op::Leaf, store.get(id).clone());
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    /// Whether `v` is a parameter leaf.
    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].param.is_some()
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), t)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), t)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::exp);
        self.push(Op::Exp(a), t)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::ln);
        self.push(Op::Ln(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(T::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(Scalar::sigmoid);
        self.push(Op::Sigmoid(a), t)
    }

    /// `[n, m] x [m, p] -> [n, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let (n, m, p) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); n * p];
        for i in 0..n {
            let arow = &va.data()[i * m..(i + 1) * m];
            let orow = &mut out[i * p..(i + 1) * p];
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &vb.data()[k * p..(k + 1) * p];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        let t = Tensor::new(vec![n, p], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    /// `W x + b` with `W: [out, in]`, `b: [out]` and `x` either `[in]` or
    /// a batch `[n, in]` (one row per example).
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vw.ndim() != 2 || vb.ndim() != 1 || vb.len() != vw.shape()[0] {
            return Err(shape_err("affine", vw.shape(), vb.shape()));
        }
        let (out_dim, in_dim) = (vw.shape()[0], vw.shape()[1]);
        if vx.ndim() > 2 || vx.cols() != in_dim {
            return Err(shape_err("affine", vx.shape(), vw.shape()));
        }
        let n = vx.rows();
        let mut out = Vec::with_capacity(n * out_dim);
        for r in 0..n {
            let xr = vx.row(r);
            for j in 0..out_dim {
                let wr = vw.row(j);
                let mut acc = vb.data()[j];
                for (a, b) in xr.iter().zip(wr) {
                    acc += *a * *b;
                }
                out.push(acc);
            }
        }
        let shape = if vx.ndim() == 1 {
            vec![out_dim]
        } else {
            vec![n, out_dim]
        };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::Affine { x, w, b }, t))
    }

    /// Concatenation along the last axis. Inputs must agree on all leading
    /// dimensions.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Graph("concat of zero tensors".into()))?;
        let lead = self.value(first).shape()[..self.value(first).ndim() - 1].to_vec();
        let rows = self.value(first).rows();
        let mut total = 0;
        for &x in xs {
            let s = self.value(x).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", self.value(first).shape(), s));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat(xs.to_vec()), t))
    }

    /// Stacks inputs along the first axis. Vectors count as single rows;
    /// the result is always a matrix.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Graph("concat_rows of zero tensors".into()))?;
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.ndim() > 2 || v.cols() != cols {
                return Err(shape_err(
                    "concat_rows",
                    self.value(first).shape(),
                    v.shape(),
                ));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(Op::ConcatRows(xs.to_vec()), t))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if start >= end || end > v.cols() {
            return Err(Error::Index {
                op: "slice_cols",
                index: end,
                len: v.cols(),
            });
        }
        let mut out = Vec::with_capacity(v.rows() * (end - start));
        for r in 0..v.rows() {
            out.extend_from_slice(&v.row(r)[start..end]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::SliceCols { x, start }, t))
    }

    /// Selects rows of a matrix (repeats allowed): `[n, d] -> [idx.len(), d]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return Err(shape_err("gather_rows", v.shape(), &[idx.len()]));
        }
        if idx.is_empty() {
            return Err(Error::Graph("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(idx.len() * v.cols());
        for &i in idx {
            if i >= v.rows() {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    len: v.rows(),
                });
            }
            out.extend_from_slice(v.row(i));
        }
        let t = Tensor::new(vec![idx.len(), v.cols()], out)?;
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            t,
        ))
    }

    /// Arithmetic mean of rows `i..=j` for each inclusive range:
    /// `[n, d] -> [ranges.len(), d]`.
    pub fn segment_mean(&mut self, x: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() != 2 {
            return Err(shape_err("segment_mean", v.shape(), &[ranges.len()]));
        }
        if ranges.is_empty() {
            return Err(Error::Graph("segment_mean with no ranges".into()));
        }
        let d = v.cols();
        let mut out = vec![T::zero(); ranges.len() * d];
        for (r, &(i, j)) in ranges.iter().enumerate() {
            if i > j || j >= v.rows() {
                return Err(Error::Index {
                    op: "segment_mean",
                    index: j.max(i),
                    len: v.rows(),
                });
            }
            let inv = T::one() / T::lit((j - i + 1) as f64);
            let o = &mut out[r * d..(r + 1) * d];
            for t in i..=j {
                for (acc, &val) in o.iter_mut().zip(v.row(t)) {
                    *acc += val;
                }
            }
            for acc in o.iter_mut() {
                *acc *= inv;
            }
        }
        let t = Tensor::new(vec![ranges.len(), d], out)?;
        Ok(self.push(
            Op::SegmentMean {
                x,
                ranges: ranges.to_vec(),
            },
            t,
        ))
    }

    /// Mean of rows `i..=j`, returned as a vector.
    pub fn mean_rows(&mut self, x: Var, i: usize, j: usize) -> Result<Var> {
        let m = self.segment_mean(x, &[(i, j)])?;
        let d = self.value(m).cols();
        self.reshape(m, &[d])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let t = v
            .reshaped(shape)
            .map_err(|_| shape_err("reshape", v.shape(), shape))?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x).softmax();
        self.push(Op::Softmax(x), t)
    }

    /// Fused softmax + cross-entropy over the rows of `logits` (`[V]` or
    /// `[m, V]`). Returns `sum_r weights[r] * -log softmax(logits_r)[target_r]`;
    /// rows whose target is `None` contribute nothing.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        weights: &[T],
    ) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = (v.rows(), v.cols());
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_err(
                "softmax_xent",
                v.shape(),
                &[targets.len(), weights.len()],
            ));
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut loss = T::zero();
        for (r, tgt) in targets.iter().enumerate() {
            let row = v.row(r);
            let lse = log_sum_exp(row);
            probs.extend(row.iter().map(|&z| (z - lse).exp()));
            if let Some(t) = *tgt {
                if t >= cols {
                    return Err(Error::Index {
                        op: "softmax_xent",
                        index: t,
                        len: cols,
                    });
                }
                loss += weights[r] * (lse - row[t]);
            }
        }
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        Ok(self.push(op, Tensor::scalar(loss)))
    }

    /// Fused sigmoid + binary cross-entropy, summed over all elements.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let v = self.value(logits);
        if targets.len() != v.len() {
            return Err(shape_err("bce_with_logits", v.shape(), &[targets.len()]));
        }
        let loss = v
            .data()
            .iter()
            .zip(targets)
            .fold(T::zero(), |acc, (&x, &y)| acc + x.softplus() - x * y);
        let op = Op::BceLogits {
            logits,
            targets: targets.to_vec(),
        };
        Ok(self.push(op, Tensor::scalar(loss)))
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// on the path to the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Clears gradients so that [`backward`](Self::backward) may run again.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients start from zero on
    /// every call; a second call without [`zero_grad`](Self::zero_grad) is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward called twice without zero_grad".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.by_param.insert(pid, g);
            }
        }
        self.grads = grads;
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, &self.nodes, *a, gd.to_vec());
                accumulate(grads, &self.nodes, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, &self.nodes, *a, gd.to_vec());
                accumulate(grads, &self.nodes, *b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                accumulate(
                    grads,
                    &self.nodes,
                    *a,
                    gd.iter().zip(vb).map(|(&g, &x)| g * x).collect(),
                );
                accumulate(
                    grads,
                    &self.nodes,
                    *b,
                    gd.iter().zip(va).map(|(&g, &x)| g * x).collect(),
                );
            }
            Op::AddScalar(a) => accumulate(grads, &self.nodes, *a, gd.to_vec()),
            Op::Scale(a, c) => {
                accumulate(grads, &self.nodes, *a, gd.iter().map(|&v| v * *c).collect())
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(y.data()).map(|(&g, &e)| g * e).collect();
                accumulate(grads, &self.nodes, *a, d);
            }
            Op::Ln(a) => {
                let x = self.value(*a).data();
                accumulate(
                    grads,
                    &self.nodes,
                    *a,
                    gd.iter().zip(x).map(|(&g, &x)| g / x).collect(),
                );
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &t)| g * (T::one() - t * t))
                    .collect();
                accumulate(grads, &self.nodes, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect();
                accumulate(grads, &self.nodes, *a, d);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, p) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut da = vec![T::zero(); n * m];
                let mut db = vec![T::zero(); m * p];
                for r in 0..n {
                    let grow = &gd[r * p..(r + 1) * p];
                    for k in 0..m {
                        let brow = &vb.data()[k * p..(k + 1) * p];
                        let mut acc = T::zero();
                        for (gv, bv) in grow.iter().zip(brow) {
                            acc += *gv * *bv;
                        }
                        da[r * m + k] = acc;
                        let aik = va.data()[r * m + k];
                        for (dbv, gv) in db[k * p..(k + 1) * p].iter_mut().zip(grow) {
                            *dbv += aik * *gv;
                        }
                    }
                }
                accumulate(grads, &self.nodes, *a, da);
                accumulate(grads, &self.nodes, *b, db);
            }
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (vw.shape()[0], vw.shape()[1]);
                let n = vx.rows();
                let mut dx = vec![T::zero(); n * in_dim];
                let mut dw = vec![T::zero(); out_dim * in_dim];
                let mut db = vec![T::zero(); out_dim];
                for r in 0..n {
                    let xr = vx.row(r);
                    let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                    for j in 0..out_dim {
                        let gj = gd[r * out_dim + j];
                        if gj == T::zero() {
                            continue;
                        }
                        db[j] += gj;
                        let wr = vw.row(j);
                        let dwr = &mut dw[j * in_dim..(j + 1) * in_dim];
                        for k in 0..in_dim {
                            dxr[k] += gj * wr[k];
                            dwr[k] += gj * xr[k];
                        }
                    }
                }
                accumulate(grads, &self.nodes, *x, dx);
                accumulate(grads, &self.nodes, *w, dw);
                accumulate(grads, &self.nodes, *b, db);
            }
            Op::Concat(xs) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, &self.nodes, x, d);
                    offset += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    accumulate(grads, &self.nodes, x, gd[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let vx = self.value(*x);
                let (rows, cols, w) = (vx.rows(), vx.cols(), y.cols());
                let mut d = vec![T::zero(); vx.len()];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w]
                        .copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                accumulate(grads, &self.nodes, *x, d);
            }
            Op::GatherRows { x, idx } => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut d = vec![T::zero(); vx.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..c {
                        d[i * c + k] += gd[r * c + k];
                    }
                }
                accumulate(grads, &self.nodes, *x, d);
            }
            Op::SegmentMean { x, ranges } => {
                let vx = self.value(*x);
                let c = vx.cols();
                let mut d = vec![T::zero(); vx.len()];
                for (r, &(i, j)) in ranges.iter().enumerate() {
                    let inv = T::one() / T::lit((j - i + 1) as f64);
                    for t in i..=j {
                        for k in 0..c {
                            d[t * c + k] += gd[r * c + k] * inv;
                        }
                    }
                }
                accumulate(grads, &self.nodes, *x, d);
            }
            Op::Reshape(x) => accumulate(grads, &self.nodes, *x, gd.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(grads, &self.nodes, *x, vec![gd[0]; n]);
            }
            Op::Softmax(x) => {
                let c = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let s = y.row(r);
                    let gr = &gd[r * c..(r + 1) * c];
                    let dot = s.iter().zip(gr).fold(T::zero(), |a, (&s, &g)| a + s * g);
                    d.extend(s.iter().zip(gr).map(|(&s, &g)| s * (g - dot)));
                }
                accumulate(grads, &self.nodes, *x, d);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let mut d = vec![T::zero(); probs.len()];
                for (r, tgt) in targets.iter().enumerate() {
                    if let Some(t) = *tgt {
                        let scale = gd[0] * weights[r];
                        for k in 0..c {
                            d[r * c + k] = scale * probs[r * c + k];
                        }
                        d[r * c + t] -= scale;
                    }
                }
                accumulate(grads, &self.nodes, *logits, d);
            }
            Op::BceLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let d = x
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| gd[0] * (x.sigmoid() - t))
                    .collect();
                accumulate(grads, &self.nodes, *logits, d);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => {
            let shape = nodes[v.0].value.shape().to_vec();
            *slot = Some(Tensor::new(shape, d).expect("gradient shape matches value"));
        }
    }
}
