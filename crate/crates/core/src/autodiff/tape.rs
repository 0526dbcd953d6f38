//! Wengert tape for reverse-mode differentiation.
//!
//! Every primitive records its output value and inputs; `backward` replays the
//! tape in reverse. A non-finite value anywhere poisons the tape, and both
//! `check` and `backward` report it as a numerical overflow.

use std::sync::Arc;

use super::sparse::SparseMap;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    SumBlocks(Var, usize),
    NormalizeRows(Var, Vec<f64>),
    RowDot(Var, Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Sparse(Var, Arc<SparseMap>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

/// Gradients of a scalar objective with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the objective does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
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

/// Exact GELU `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * gelu_cdf(x)
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

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Errors if any recorded value is non-finite.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NumericalOverflow(op.to_string())),
            None => Ok(()),
        }
    }

    /// Input value. Parameters and constants are both leaves; the caller
    /// decides which gradients to read.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, "leaf")
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).as_matrix();
        let (k2, n) = self.value(b).as_matrix();
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).as_matrix();
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), "transpose")
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &'static str) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "{name}: operand sizes {} vs {}", ta.len(), tb.len());
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b), "div")
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.value(a).as_matrix();
        assert_eq!(self.value(bias).len(), n, "add_row: bias length");
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AddRow(a, bias), "add_row")
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a), "add_scalar")
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, c)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a), "gelu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a), "log")
    }

    /// `ln(1 + eˣ)`, i.e. `-ln σ(-x)`: the two-way softmax negative log-likelihood.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a), "softplus")
    }

    /// `aᵖ` for non-negative `a`.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p), "powf")
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi), "clamp")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Maximum element; the gradient flows to the first argmax.
    pub fn max(&mut self, a: Var) -> Var {
        let data = self.value(a).data();
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        let v = data[best];
        self.push(Tensor::scalar(v), Op::Max(a, best), "max")
    }

    /// Splits a flat tensor into `blocks` equal contiguous parts and sums each.
    pub fn sum_blocks(&mut self, a: Var, blocks: usize) -> Var {
        let data = self.value(a).data();
        assert!(blocks > 0 && data.len().is_multiple_of(blocks), "sum_blocks: {} not divisible by {blocks}", data.len());
        let size = data.len() / blocks;
        let out: Vec<f64> = data.chunks(size).map(|c| c.iter().sum()).collect();
        self.push(Tensor::vector(out), Op::SumBlocks(a, blocks), "sum_blocks")
    }

    /// L2-normalizes each row. Zero rows produce non-finite values and poison the tape.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).as_matrix();
        let src = self.value(a).data();
        let mut norms = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms.push(norm);
            for (o, x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = x / norm;
            }
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::NormalizeRows(a, norms), "normalize_rows")
    }

    /// Row-wise dot product of two equally shaped matrices → `[m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.value(a).as_matrix();
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "row_dot shapes");
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = (0..m)
            .map(|i| x[i * n..(i + 1) * n].iter().zip(&y[i * n..(i + 1) * n]).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Tensor::vector(out), Op::RowDot(a, b), "row_dot")
    }

    /// Row-wise cosine similarity → `[m]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Var {
        let na = self.normalize_rows(a);
        let nb = self.normalize_rows(b);
        self.row_dot(na, nb)
    }

    /// Concatenates along the leading axis (rows). All parts share the trailing shape.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let tail: Vec<usize> = self.value(parts[0]).shape()[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(&t.shape()[1..], &tail[..], "concat trailing shapes");
            lead += t.shape()[0];
            out.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()), "concat")
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        let row: usize = t.shape()[1..].iter().product();
        assert!(start <= end && end <= t.shape()[0], "slice_rows out of range");
        let data = t.data()[start * row..end * row].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        self.push(Tensor::from_parts(shape, data), Op::SliceRows(a, start), "slice_rows")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(shape.iter().product::<usize>(), t.len(), "reshape size");
        let data = t.data().to_vec();
        self.push(Tensor::from_parts(shape.to_vec(), data), Op::Reshape(a), "reshape")
    }

    /// Applies a fixed sparse linear map to the flattened value → `[rows]`.
    pub fn sparse(&mut self, a: Var, map: Arc<SparseMap>) -> Var {
        let x = self.value(a).data();
        assert_eq!(x.len(), map.cols(), "sparse map expects {} inputs, got {}", map.cols(), x.len());
        let y = map.apply(x);
        self.push(Tensor::vector(y), Op::Sparse(a, map), "sparse")
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar objective");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(self.value(loss).shape().to_vec(), vec![1.0]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).as_matrix();
                    let (_, n) = self.value(*b).as_matrix();
                    let ga = matmul_nt(gd, self.value(*b).data(), m, n, k);
                    let gb = matmul_tn(self.value(*a).data(), gd, m, k, n);
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga));
                    acc(&mut grads, *b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                }
                Op::Transpose(a) => {
                    let (m, n) = self.value(*a).as_matrix();
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            out[i * n + j] = gd[j * m + i];
                        }
                    }
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), out));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reshape_like(&g, self.value(*a)));
                    acc(&mut grads, *b, reshape_like(&g, self.value(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reshape_like(&g, self.value(*a)));
                    acc(&mut grads, *b, reshape_like(&g.map(|x| -x), self.value(*b)));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = gd.iter().zip(x).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga));
                    acc(&mut grads, *b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                }
                Op::Div(a, b) => {
                    let (x, y) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = gd.iter().zip(y).map(|(g, y)| g / y).collect();
                    let gb: Vec<f64> = gd
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga));
                    acc(&mut grads, *b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = self.value(*a).as_matrix();
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        for (o, v) in gb.iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *bias, Tensor::from_parts(self.value(*bias).shape().to_vec(), gb));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| c * x)),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::Gelu(a) => {
                    let x = self.value(*a).data();
                    let out = gd
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| g * (gelu_cdf(x) + x * gelu_pdf(x)))
                        .collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let out = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let out = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let out = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    let out = gd.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Powf(a, p) => {
                    let x = self.value(*a).data();
                    let out = gd
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if *p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a).data();
                    let out = gd
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor::from_parts(g.shape().to_vec(), out));
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    acc(&mut grads, *a, Tensor::full(t.shape(), gd[0]));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    acc(&mut grads, *a, Tensor::full(t.shape(), gd[0] / t.len() as f64));
                }
                Op::Max(a, at) => {
                    let mut out = Tensor::zeros(self.value(*a).shape());
                    out.data_mut()[*at] = gd[0];
                    acc(&mut grads, *a, out);
                }
                Op::SumBlocks(a, blocks) => {
                    let t = self.value(*a);
                    let size = t.len() / blocks;
                    let out = (0..t.len()).map(|i| gd[i / size]).collect();
                    acc(&mut grads, *a, Tensor::from_parts(t.shape().to_vec(), out));
                }
                Op::NormalizeRows(a, norms) => {
                    let (m, n) = self.value(*a).as_matrix();
                    let y = node.value.data();
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &gd[i * n..(i + 1) * n];
                        let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            out[i * n + j] = (gr[j] - yr[j] * proj) / norms[i];
                        }
                    }
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), out));
                }
                Op::RowDot(a, b) => {
                    let (m, n) = self.value(*a).as_matrix();
                    let (x, y) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![0.0; m * n];
                    let mut gb = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = gd[i] * y[i * n + j];
                            gb[i * n + j] = gd[i] * x[i * n + j];
                        }
                    }
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), ga));
                    acc(&mut grads, *b, Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let piece = gd[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        acc(&mut grads, *p, Tensor::from_parts(t.shape().to_vec(), piece));
                    }
                }
                Op::SliceRows(a, start) => {
                    let t = self.value(*a);
                    let row: usize = t.shape()[1..].iter().product();
                    let mut out = Tensor::zeros(t.shape());
                    out.data_mut()[start * row..start * row + gd.len()].copy_from_slice(gd);
                    acc(&mut grads, *a, out);
                }
                Op::Reshape(a) => acc(&mut grads, *a, reshape_like(&g, self.value(*a))),
                Op::Sparse(a, map) => {
                    let out = map.apply_transpose(gd);
                    acc(&mut grads, *a, Tensor::from_parts(self.value(*a).shape().to_vec(), out));
                }
            }
            grads[idx] = Some(g);
        }

        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NumericalOverflow("backward pass".into()));
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn reshape_like(g: &Tensor, like: &Tensor) -> Tensor {
    Tensor::from_parts(like.shape().to_vec(), g.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(t.scalar(y), 9.0);
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.5, -2.0, 7.0]));
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746).abs() < 1e-8);
        assert!((gelu(12.0) - 12.0).abs() < 1e-12);
        assert!(gelu(-12.0).abs() < 1e-12);
    }

    #[test]
    fn max_uses_first_argmax() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 4.0, 4.0, 2.0]));
        let m = t.max(x);
        let g = t.backward(m).unwrap().wrt(x);
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_trips_overflow() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1000.0));
        let y = t.exp(x);
        assert!(matches!(t.backward(y), Err(Error::NumericalOverflow(_))));
    }

    #[test]
    fn zero_row_normalization_poisons() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = t.normalize_rows(x);
        let s = t.sum(y);
        assert!(t.check().is_err());
        assert!(t.backward(s).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.leaf(Tensor::vector(vec![3.0]));
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().wrt(unused).data(), &[0.0]);
    }
}
