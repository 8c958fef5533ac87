//! Reverse-mode gradient tape.
//!
//! Each operation appends a node holding its forward value and the ids of
//! its inputs. Node ids increase monotonically, so a single reverse sweep
//! from the loss visits every node after all of its consumers.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{matmul_raw, transpose_raw};
use super::{NnError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Softmax(usize),
    LeakyRelu(usize, f64),
    Elu(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Gather(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    ConcatCols(usize, usize),
    Reshape(usize),
    Distance(usize, usize),
    TokenNll(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass. Values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NnError {
    NnError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A constant input: gradients are not propagated into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked but which is not tied to a stored
    /// parameter. Useful for checking gradients of free inputs.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Record a parameter. Frozen parameters enter as constants.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        if p.frozen {
            self.push(p.value.clone(), Op::Leaf, false)
        } else {
            self.push(p.value.clone(), Op::Param(id), true)
        }
    }

    /// Record a parameter by name.
    pub fn param_named(&self, store: &ParamStore, name: &str) -> Result<Var<'_>, NnError> {
        let id = store.id(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        Ok(self.param(store, id))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NnError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(NnError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut params = Vec::new();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, id, &g, &mut grads);
            }
            if let Op::Param(pid) = node.op {
                params.push((id, pid));
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, params, shapes })
    }
}

/// Gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`, zero if the loss does not reach it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.id].clone();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Add parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.grads[node] {
                let p = store.get_mut(pid);
                for (acc, v) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, g.to_vec());
            acc(nodes, grads, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, g.to_vec());
            acc(nodes, grads, *b, g.iter().map(|x| -x).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            acc(nodes, grads, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            acc(nodes, grads, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
        }
        Op::Scale(a, c) => acc(nodes, grads, *a, g.iter().map(|x| x * c).collect()),
        Op::AddConst(a) | Op::Reshape(a) => acc(nodes, grads, *a, g.to_vec()),
        Op::AddRow(a, b) => {
            acc(nodes, grads, *a, g.to_vec());
            let n = out.cols();
            let mut gb = vec![0.0; n];
            for row in g.chunks_exact(n) {
                gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            acc(nodes, grads, *b, gb);
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].requires_grad {
                let bt = transpose_raw(bv.data(), k, n);
                acc(nodes, grads, *a, matmul_raw(g, &bt, m, n, k));
            }
            if nodes[*b].requires_grad {
                let at = transpose_raw(av.data(), m, k);
                acc(nodes, grads, *b, matmul_raw(&at, g, k, m, n));
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            acc(nodes, grads, *a, transpose_raw(g, r, c));
        }
        Op::Softmax(a) => {
            let n = out.cols();
            let mut ga = vec![0.0; g.len()];
            for ((grow, yrow), garow) in
                g.chunks_exact(n).zip(out.data().chunks_exact(n)).zip(ga.chunks_exact_mut(n))
            {
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for ((o, gv), y) in garow.iter_mut().zip(grow).zip(yrow) {
                    *o = y * (gv - dot);
                }
            }
            acc(nodes, grads, *a, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let x = nodes[*a].value.data();
            acc(nodes, grads, *a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { g * slope }).collect());
        }
        Op::Elu(a, alpha) => {
            let x = nodes[*a].value.data();
            acc(
                nodes,
                grads,
                *a,
                g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { g * alpha * x.exp() }).collect(),
            );
        }
        Op::Tanh(a) => {
            acc(nodes, grads, *a, g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect());
        }
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            acc(nodes, grads, *a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
        }
        Op::Sum(a) => acc(nodes, grads, *a, vec![g[0]; nodes[*a].value.numel()]),
        Op::Mean(a) => {
            let n = nodes[*a].value.numel();
            acc(nodes, grads, *a, vec![g[0] / n as f64; n]);
        }
        Op::Gather(a, idx) => {
            let src = &nodes[*a].value;
            let n = src.cols();
            let mut ga = vec![0.0; src.numel()];
            for (r, &i) in idx.iter().enumerate() {
                for (d, s) in ga[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                    *d += s;
                }
            }
            acc(nodes, grads, *a, ga);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.numel();
                acc(nodes, grads, p, g[offset..offset + len].to_vec());
                offset += len;
            }
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
            let mut ga = Vec::with_capacity(nodes[*a].value.numel());
            let mut gb = Vec::with_capacity(nodes[*b].value.numel());
            for row in g.chunks_exact(ca + cb) {
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            acc(nodes, grads, *a, ga);
            acc(nodes, grads, *b, gb);
        }
        Op::Distance(a, b) => {
            let d = out.item();
            if d > 0.0 {
                let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                let unit: Vec<f64> = av.iter().zip(bv).map(|(x, y)| g[0] * (x - y) / d).collect();
                acc(nodes, grads, *b, unit.iter().map(|u| -u).collect());
                acc(nodes, grads, *a, unit);
            }
        }
        Op::TokenNll(a, targets) => {
            let logits = &nodes[*a].value;
            let v = logits.cols();
            let scale = g[0] / targets.len() as f64;
            let mut ga = vec![0.0; logits.numel()];
            for (r, &t) in targets.iter().enumerate() {
                let row = logits.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                for (c, x) in row.iter().enumerate() {
                    let p = (x - max).exp() / z;
                    ga[r * v + c] = scale * (p - if c == t { 1.0 } else { 0.0 });
                }
            }
            acc(nodes, grads, *a, ga);
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn zip_with(&self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.value();
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.map(|x| x * c), Op::Scale(self.id, c))
    }

    pub fn add_const(&self, c: f64) -> Var<'t> {
        self.unary(self.map(|x| x + c), Op::AddConst(self.id))
    }

    /// `self [m, n]` plus `row [n]` broadcast over rows.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>, NnError> {
        let (a, b) = (self.value(), row.value());
        if a.shape().len() != 2 || b.numel() != a.cols() {
            return Err(mismatch("add_row", a.shape(), b.shape()));
        }
        let n = a.cols();
        let mut data = a.data().to_vec();
        for r in data.chunks_exact_mut(n) {
            r.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let v = Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>, NnError> {
        let a = self.value();
        let [m, n] = a.shape() else {
            return Err(mismatch("transpose", a.shape(), &[]));
        };
        let v = Tensor::new(vec![*n, *m], transpose_raw(a.data(), *m, *n))?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Var<'t> {
        let a = self.value();
        let mut data = a.data().to_vec();
        data.chunks_exact_mut(a.cols()).for_each(softmax_row);
        let v = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::Softmax(self.id))
    }

    /// Row-wise softmax where row `i` only attends to columns `0..=i+offset`.
    pub fn causal_softmax_rows(&self, offset: usize) -> Var<'t> {
        let a = self.value();
        let n = a.cols();
        let mut data = a.data().to_vec();
        for (i, row) in data.chunks_exact_mut(n).enumerate() {
            let visible = (i + offset + 1).min(n);
            softmax_row(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|x| *x = 0.0);
        }
        let v = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.unary(v, Op::Softmax(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(self.map(|x| if x > 0.0 { x } else { slope * x }), Op::LeakyRelu(self.id, slope))
    }

    pub fn elu(&self, alpha: f64) -> Var<'t> {
        self.unary(self.map(|x| if x > 0.0 { x } else { alpha * x.exp_m1() }), Op::Elu(self.id, alpha))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(self.map(f64::tanh), Op::Tanh(self.id))
    }

    /// `max(x, 0)`; the gradient at 0 is 0.
    pub fn relu(&self) -> Var<'t> {
        self.unary(self.map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.numel() as f64;
        self.unary(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Rows of a matrix by index; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>, NnError> {
        let a = self.value();
        if a.shape().len() != 2 || idx.is_empty() {
            return Err(mismatch("gather_rows", a.shape(), &[idx.len()]));
        }
        let n = a.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= a.rows() {
                return Err(NnError::IndexOutOfRange { index: i, len: a.rows() });
            }
            data.extend_from_slice(a.row(i));
        }
        let v = Tensor::new(vec![idx.len(), n], data)?;
        Ok(self.unary(v, Op::Gather(self.id, idx.to_vec())))
    }

    pub fn row(&self, i: usize) -> Result<Var<'t>, NnError> {
        self.gather_rows(&[i])
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>, NnError> {
        let v = self.value().reshaped(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.rows() != b.rows() {
            return Err(mismatch("concat_cols", a.shape(), b.shape()));
        }
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for r in 0..a.rows() {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        let v = Tensor::new(vec![a.rows(), a.cols() + b.cols()], data)?;
        Ok(self.binary(other, v, Op::ConcatCols(self.id, other.id)))
    }

    /// Euclidean distance between two equal-size tensors. The gradient at
    /// zero distance is taken as zero.
    pub fn distance(&self, other: Var<'t>) -> Result<Var<'t>, NnError> {
        let (a, b) = (self.value(), other.value());
        if a.numel() != b.numel() {
            return Err(mismatch("distance", a.shape(), b.shape()));
        }
        let d = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        Ok(self.binary(other, Tensor::scalar(d), Op::Distance(self.id, other.id)))
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn token_nll(&self, targets: &[usize]) -> Result<Var<'t>, NnError> {
        let logits = self.value();
        if logits.shape().len() != 2 || logits.rows() != targets.len() || targets.is_empty() {
            return Err(mismatch("token_nll", logits.shape(), &[targets.len()]));
        }
        let v = logits.cols();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(NnError::IndexOutOfRange { index: t, len: v });
            }
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let loss = Tensor::scalar(total / targets.len() as f64);
        Ok(self.unary(loss, Op::TokenNll(self.id, targets.to_vec())))
    }
}

/// Stack matrices with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, NnError> {
    let first = parts.first().ok_or(NnError::ShapeMismatch { op: "concat_rows", left: vec![], right: vec![] })?;
    let tape = first.tape;
    let cols = first.cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let v = p.value();
        if v.shape().len() != 2 || v.cols() != cols {
            return Err(mismatch("concat_rows", &[rows, cols], v.shape()));
        }
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.requires(&ids);
    Ok(tape.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(ids), rg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let loss = x.mul(x).unwrap().sum();
        assert_eq!(tape.backward(loss).unwrap().wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0]).unwrap(), false).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let x = tape.param(&store, id);
            let loss = x.mul(x).unwrap().sum();
            tape.backward(loss).unwrap().accumulate_into(&mut store);
        }
        assert_eq!(store.get(id).grad.data(), &[4.0, 8.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(3.0), true).unwrap();
        let tape = Tape::new();
        let w = tape.param(&store, id);
        tape.backward(w.scale(2.0)).unwrap().accumulate_into(&mut store);
        assert_eq!(store.get(id).grad.data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let tape = Tape::new();
        let x = tape.constant(t(&[&[1.0, 2.0, 3.0], &[-5.0, 0.0, 700.0]]));
        let y = x.softmax_rows().value();
        for r in 0..2 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = tape.constant(t(&[&[101.0, 102.0, 103.0], &[-5.0, 0.0, 700.0]])).softmax_rows().value();
        for (a, b) in y.row(0).iter().zip(shifted.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let tape = Tape::new();
        let y = tape.constant(t(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]])).causal_softmax_rows(0).value();
        assert_eq!(y.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(y.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn token_nll_examples() {
        let tape = Tape::new();
        let uniform = tape.constant(t(&[&[0.0; 4]]));
        assert!((uniform.token_nll(&[2]).unwrap().item() - 4f64.ln()).abs() < 1e-12);
        let sure = tape.constant(t(&[&[50.0, 0.0, 0.0]]));
        assert!(sure.token_nll(&[0]).unwrap().item() < 1e-20);
        let two = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        let got = two.token_nll(&[0, 1]).unwrap().item();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.313262).abs() < 1e-6);
        assert!(matches!(two.token_nll(&[0, 2]), Err(NnError::IndexOutOfRange { index: 2, len: 2 })));
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(NnError::ShapeMismatch { op: "matmul", .. })));
        assert!(a.add(tape.constant(Tensor::zeros(&[3, 2]))).is_err());
        assert!(matches!(a.gather_rows(&[5]), Err(NnError::IndexOutOfRange { .. })));
    }

    #[test]
    fn distance_gradient_at_zero_is_zero() {
        let tape = Tape::new();
        let a = tape.variable(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let b = tape.variable(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let g = tape.backward(a.distance(b).unwrap()).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 0.0]);
    }
}
