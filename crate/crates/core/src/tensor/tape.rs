use std::borrow::Cow;

use rand::Rng;

use super::{sigmoid, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive identifiers for [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Offset(f64),
    Square,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    Concat,
    Slice { start: usize, len: usize },
    Embedding(Vec<usize>),
    Mask(Vec<f64>),
    Sum,
    Mean,
    Clamp { lo: f64, hi: f64 },
    Pick(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Embedding(Var, Vec<usize>),
    Mask(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Clamp(Var, f64, f64),
    Pick(Var, usize),
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted and `backward` simply walks it in reverse.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    training: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            training: false,
        }
    }

    pub fn training() -> Self {
        Self {
            nodes: Vec::with_capacity(1024),
            training: true,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a tensor by reference; it is differentiable iff the tensor says so.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.param(tensor, tensor.requires_grad())
    }

    /// Binds a tensor by reference with an explicit trainability flag.
    pub fn param(&mut self, tensor: &'a Tensor, trainable: bool) -> Var {
        self.push(
            Cow::Borrowed(tensor.data()),
            tensor.shape().to_vec(),
            Op::Leaf,
            trainable,
        )
    }

    /// Records an owned tensor as a leaf.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(Cow::Owned(tensor.into_data()), shape, Op::Leaf, requires_grad)
    }

    /// Non-differentiable owned constant.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.input(t))
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Result<Var> {
        let n = data.len();
        self.constant(&[n], data)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("recorded shape is valid")
    }

    fn push(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), shape, op, requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.derived(value, shape, op, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Dispatches a primitive by id. Binary primitives take two inputs,
    /// `Concat` any non-zero number, all others exactly one.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let name = format!("{prim:?}");
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(TensorError::Invalid(format!(
                    "{name} expects {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match prim {
            Primitive::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            Primitive::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            Primitive::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            Primitive::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            Primitive::Concat => self.concat(inputs),
            other => {
                arity(1)?;
                let x = inputs[0];
                match other {
                    Primitive::Scale(c) => Ok(self.scale(x, c)),
                    Primitive::Offset(c) => Ok(self.offset(x, c)),
                    Primitive::Square => Ok(self.square(x)),
                    Primitive::Sigmoid => Ok(self.sigmoid(x)),
                    Primitive::Tanh => Ok(self.tanh(x)),
                    Primitive::Exp => Ok(self.exp(x)),
                    Primitive::Log => self.log(x),
                    Primitive::Softmax => Ok(self.softmax(x)),
                    Primitive::LogSoftmax => Ok(self.log_softmax(x)),
                    Primitive::Slice { start, len } => self.slice(x, start, len),
                    Primitive::Embedding(ids) => self.embedding(x, &ids),
                    Primitive::Mask(mask) => self.mask(x, mask),
                    Primitive::Sum => Ok(self.sum(x)),
                    Primitive::Mean => Ok(self.mean(x)),
                    Primitive::Clamp { lo, hi } => Ok(self.clamp(x, lo, hi)),
                    Primitive::Pick(i) => self.pick(x, i),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// `[m,k]·[k,n] → [m,n]`, `[m,k]·[k] → [m]`, or `[k]·[k,n] → [n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        let (av, bv) = (self.value(a), self.value(b));
        let (value, shape) = match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        for (o, &bpj) in row.iter_mut().zip(brow) {
                            *o += aip * bpj;
                        }
                    }
                }
                (out, vec![m, n])
            }
            (2, 1) => {
                let (m, k) = (sa[0], sa[1]);
                if sb[0] != k {
                    return Err(mismatch());
                }
                let out = (0..m).map(|i| dot(&av[i * k..(i + 1) * k], bv)).collect();
                (out, vec![m])
            }
            (1, 2) => {
                let (k, n) = (sb[0], sb[1]);
                if sa[0] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; n];
                for p in 0..k {
                    let ap = av[p];
                    for (o, &bpj) in out.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                        *o += ap * bpj;
                    }
                }
                (out, vec![n])
            }
            _ => return Err(mismatch()),
        };
        Ok(self.derived(value, shape, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.derived(value, shape, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        Ok(self.derived(value, shape, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.derived(value, shape, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some((index, &value)) = self.value(x).iter().enumerate().find(|(_, &v)| v.is_nan() || v <= 0.0) {
            return Err(TensorError::NonPositiveLog { index, value });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("non-empty shape");
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let shape = self.shape(x).to_vec();
        self.derived(value, shape, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("non-empty shape");
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = self.shape(x).to_vec();
        self.derived(value, shape, Op::LogSoftmax(x), &[x])
    }

    /// Concatenates 1-D vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat of zero tensors".into()));
        }
        let mut value = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        Ok(self.derived(value, vec![n], Op::Concat(parts.to_vec()), parts))
    }

    /// Contiguous range of a 1-D vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 1 || len == 0 || start + len > shape[0] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                len: shape.iter().product(),
            });
        }
        let value = self.value(x)[start..start + len].to_vec();
        Ok(self.derived(value, vec![len], Op::Slice(x, start), &[x]))
    }

    /// Rows of a `[V,E]` table. One id yields `[E]`, several yield `[n,E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 || ids.is_empty() {
            return Err(TensorError::Invalid(format!(
                "embedding needs a 2-D table and at least one id, got {shape:?}"
            )));
        }
        let (rows, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                len: rows,
            });
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            value.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let out_shape = if ids.len() == 1 { vec![dim] } else { vec![ids.len(), dim] };
        Ok(self.derived(value, out_shape, Op::Embedding(table, ids.to_vec()), &[table]))
    }

    /// Multiplies by a fixed mask; the mask is recorded for backward.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(TensorError::ShapeMismatch {
                op: "mask",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        let value = zip_map(self.value(x), &mask, |a, m| a * m);
        let shape = self.shape(x).to_vec();
        Ok(self.derived(value, shape, Op::Mask(x, mask), &[x]))
    }

    /// Inverted dropout. Identity on evaluation tapes or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask(x, mask).expect("mask sized from input")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.derived(vec![s], vec![1], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.derived(vec![m], vec![1], Op::Mean(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Single element (flat index) as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let len = self.value(x).len();
        if index >= len {
            return Err(TensorError::IndexOutOfRange { op: "pick", index, len });
        }
        let v = self.value(x)[index];
        Ok(self.derived(vec![v], vec![1], Op::Pick(x, index), &[x]))
    }

    /// Sums scalars into one scalar.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter().copied();
        let first = iter
            .next()
            .ok_or_else(|| TensorError::Invalid("add_all of zero terms".into()))?;
        iter.try_fold(first, |acc, t| self.add(acc, t))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (av, bv) = (self.value(*a), self.value(*b));
                match (sa.len(), sb.len()) {
                    (2, 2) => {
                        let (m, k, n) = (sa[0], sa[1], sb[1]);
                        if let Some(da) = self.slot(*a, grads) {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    da[i * k + p] += dot(gi, &bv[p * n..(p + 1) * n]);
                                }
                            }
                        }
                        if let Some(db) = self.slot(*b, grads) {
                            for i in 0..m {
                                let gi = &g[i * n..(i + 1) * n];
                                for p in 0..k {
                                    let aip = av[i * k + p];
                                    for (d, &gij) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                        *d += aip * gij;
                                    }
                                }
                            }
                        }
                    }
                    (2, 1) => {
                        let (m, k) = (sa[0], sa[1]);
                        if let Some(da) = self.slot(*a, grads) {
                            for i in 0..m {
                                let gi = g[i];
                                for (d, &bp) in da[i * k..(i + 1) * k].iter_mut().zip(bv) {
                                    *d += gi * bp;
                                }
                            }
                        }
                        if let Some(db) = self.slot(*b, grads) {
                            for i in 0..m {
                                let gi = g[i];
                                for (d, &aip) in db.iter_mut().zip(&av[i * k..(i + 1) * k]) {
                                    *d += gi * aip;
                                }
                            }
                        }
                    }
                    (1, 2) => {
                        let (k, n) = (sb[0], sb[1]);
                        if let Some(da) = self.slot(*a, grads) {
                            for p in 0..k {
                                da[p] += dot(&bv[p * n..(p + 1) * n], g);
                            }
                        }
                        if let Some(db) = self.slot(*b, grads) {
                            for p in 0..k {
                                let ap = av[p];
                                for (d, &gj) in db[p * n..(p + 1) * n].iter_mut().zip(g) {
                                    *d += ap * gj;
                                }
                            }
                        }
                    }
                    _ => unreachable!("matmul shapes validated on forward"),
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, grads, |d| axpy(d, g, 1.0));
                self.accumulate(*b, grads, |d| axpy(d, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grads, |d| axpy(d, g, 1.0));
                self.accumulate(*b, grads, |d| axpy(d, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(*a, grads, |d| {
                    for ((d, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                });
                self.accumulate(*b, grads, |d| {
                    for ((d, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(*x, grads, |d| axpy(d, g, *c)),
            Op::Offset(x) => self.accumulate(*x, grads, |d| axpy(d, g, 1.0)),
            Op::Square(x) => {
                let xv = self.value(*x);
                self.elementwise(*x, grads, g, |i| 2.0 * xv[i]);
            }
            Op::Sigmoid(x) => self.elementwise(*x, grads, g, |i| y[i] * (1.0 - y[i])),
            Op::Tanh(x) => self.elementwise(*x, grads, g, |i| 1.0 - y[i] * y[i]),
            Op::Exp(x) => self.elementwise(*x, grads, g, |i| y[i]),
            Op::Log(x) => {
                let xv = self.value(*x);
                self.elementwise(*x, grads, g, |i| 1.0 / xv[i]);
            }
            Op::Softmax(x) => {
                let n = *node.shape.last().unwrap();
                self.accumulate(*x, grads, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s = dot(grow, yrow);
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let n = *node.shape.last().unwrap();
                self.accumulate(*x, grads, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s: f64 = grow.iter().sum();
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gi - yi.exp() * s;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(p, grads, |d| axpy(d, &g[offset..offset + n], 1.0));
                    offset += n;
                }
            }
            Op::Slice(x, start) => {
                let start = *start;
                self.accumulate(*x, grads, |d| axpy(&mut d[start..start + g.len()], g, 1.0));
            }
            Op::Embedding(table, ids) => {
                let dim = self.shape(*table)[1];
                self.accumulate(*table, grads, |d| {
                    for (row, &id) in ids.iter().enumerate() {
                        axpy(&mut d[id * dim..(id + 1) * dim], &g[row * dim..(row + 1) * dim], 1.0);
                    }
                });
            }
            Op::Mask(x, mask) => self.elementwise(*x, grads, g, |i| mask[i]),
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(*x, grads, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let g0 = g[0] / n;
                self.accumulate(*x, grads, |d| d.iter_mut().for_each(|v| *v += g0));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                self.elementwise(*x, grads, g, |i| {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        1.0
                    } else {
                        0.0
                    }
                });
            }
            Op::Pick(x, index) => {
                let index = *index;
                self.accumulate(*x, grads, |d| d[index] += g[0]);
            }
        }
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn accumulate(&self, v: Var, grads: &mut [Option<Vec<f64>>], f: impl FnOnce(&mut [f64])) {
        if let Some(d) = self.slot(v, grads) {
            f(d);
        }
    }

    fn elementwise(&self, v: Var, grads: &mut [Option<Vec<f64>>], g: &[f64], local: impl Fn(usize) -> f64) {
        self.accumulate(v, grads, |d| {
            for (i, (d, &gi)) in d.iter_mut().zip(g).enumerate() {
                *d += gi * local(i);
            }
        });
    }
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the variable did not participate in the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with zeros for non-participating variables.
    pub fn wrt(&self, tape: &Tape<'_>, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
