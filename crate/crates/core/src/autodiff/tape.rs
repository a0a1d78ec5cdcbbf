use std::ops::Range;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp for probabilities inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Slice(usize, Range<usize>),
    Reshape(usize),
    Bce { pred: usize, labels: Tensor },
    Mse { pred: usize, target: Tensor },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive operations.
///
/// Every input of node `k` has an id below `k`, so the node order is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or zeros when `var` does not reach the root.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn is_reachable(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, "leaf")
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(op, value, name)
    }

    fn map(&mut self, a: Var, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(op, value, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a.0, b.0), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a.0, b.0), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a.0, b.0), |p, q| p * q)
    }

    /// Product of an `m×k` and a `k×n` matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(x.data(), y.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        self.push(Op::MatMul(a.0, b.0), value, "matmul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, "scale", Op::Scale(a.0, c), |v| c * v)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a.0), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Op::Mean(a.0), Tensor::scalar(s), "mean")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", Op::Relu(a.0), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, "tanh", Op::Tanh(a.0), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, "sigmoid", Op::Sigmoid(a.0), sigmoid)
    }

    /// Concatenates along the last axis. All inputs must agree on every
    /// other axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.value(*v).shape().to_vec(),
            None => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: vec![],
                    rhs: vec![],
                })
            }
        };
        if first.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: vec![],
            });
        }
        let lead = &first[..first.len() - 1];
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push(Op::Concat(parts.iter().map(|v| v.0).collect()), value, "concat")
    }

    /// Contiguous range of the flattened data, as a vector.
    pub fn slice(&mut self, a: Var, range: Range<usize>) -> Result<Var> {
        let x = self.value(a);
        if range.start > range.end || range.end > x.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: x.shape().to_vec(),
                rhs: vec![range.start, range.end],
            });
        }
        let value = Tensor::vector(x.data()[range.clone()].to_vec());
        self.push(Op::Slice(a.0, range), value, "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = x.clone().reshaped(shape.to_vec());
        self.push(Op::Reshape(a.0), value, "reshape")
    }

    /// Mean binary cross-entropy of probabilities `pred` against 0/1 labels.
    /// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn loss_bce(&mut self, pred: Var, labels: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        same_shape("loss_bce", p, labels)?;
        let n = p.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let op = Op::Bce {
            pred: pred.0,
            labels: labels.clone(),
        };
        self.push(op, Tensor::scalar(total / n), "loss_bce")
    }

    /// Mean squared error.
    pub fn loss_mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        same_shape("loss_mse", p, target)?;
        let n = p.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let op = Op::Mse {
            pred: pred.0,
            target: target.clone(),
        };
        self.push(op, Tensor::scalar(total / n), "loss_mse")
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, gd, self.shape_of(*a));
                accumulate(grads, *b, gd, self.shape_of(*b));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, gd, self.shape_of(*a));
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg, self.shape_of(*b));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = gd.iter().zip(x).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, &ga, self.shape_of(*a));
                accumulate(grads, *b, &gb, self.shape_of(*b));
            }
            Op::MatMul(a, b) => {
                let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                // dA = G·Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    let out = &mut ga[i * k..(i + 1) * k];
                    for (p, o) in out.iter_mut().enumerate() {
                        let brow = &y.data()[p * n..(p + 1) * n];
                        *o = grow.iter().zip(brow).map(|(u, v)| u * v).sum();
                    }
                }
                // dB = Aᵀ·G
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let arow = &x.data()[i * k..(i + 1) * k];
                    let grow = &gd[i * n..(i + 1) * n];
                    for (p, &av) in arow.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        let out = &mut gb[p * n..(p + 1) * n];
                        for (o, &gv) in out.iter_mut().zip(grow) {
                            *o += av * gv;
                        }
                    }
                }
                accumulate(grads, *a, &ga, x.shape());
                accumulate(grads, *b, &gb, y.shape());
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = gd.iter().map(|v| c * v).collect();
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Sum(a) => {
                let shape = self.shape_of(*a);
                let ga = vec![gd[0]; self.nodes[*a].value.len()];
                accumulate(grads, *a, &ga, shape);
            }
            Op::Mean(a) => {
                let len = self.nodes[*a].value.len();
                let ga = vec![gd[0] / len as f64; len];
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                let ga: Vec<f64> = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape_of(p);
                    let c = self.nodes[p].value.cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, &gp, shape);
                    offset += c;
                }
            }
            Op::Slice(a, range) => {
                let len = self.nodes[*a].value.len();
                let mut ga = vec![0.0; len];
                ga[range.clone()].copy_from_slice(gd);
                accumulate(grads, *a, &ga, self.shape_of(*a));
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, gd, self.shape_of(*a));
            }
            Op::Bce { pred, labels } => {
                let p = self.nodes[*pred].value.data();
                let n = p.len() as f64;
                let ga: Vec<f64> = p
                    .iter()
                    .zip(labels.data())
                    .map(|(&p, &y)| {
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            return 0.0;
                        }
                        gd[0] * (-y / p + (1.0 - y) / (1.0 - p)) / n
                    })
                    .collect();
                accumulate(grads, *pred, &ga, self.shape_of(*pred));
            }
            Op::Mse { pred, target } => {
                let p = self.nodes[*pred].value.data();
                let n = p.len() as f64;
                let ga: Vec<f64> = p
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| gd[0] * 2.0 * (p - t) / n)
                    .collect();
                accumulate(grads, *pred, &ga, self.shape_of(*pred));
            }
        }
    }

    fn shape_of(&self, id: usize) -> &[usize] {
        self.nodes[id].value.shape()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: &[f64], shape: &[usize]) {
    match &mut grads[id] {
        Some(t) => {
            for (o, v) in t.data_mut().iter_mut().zip(g) {
                *o += v;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g.to_vec()).expect("gradient shape"));
        }
    }
}

/// `out = a·b` for row-major `m×k` and `k×n` operands.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
