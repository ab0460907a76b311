//! Tape-based reverse-mode differentiation over dense real tensors.
//!
//! A [`Graph`] records every operation whose inputs require gradients.
//! Operations on constants are evaluated eagerly and stored as plain
//! leaves, so frozen sub-networks cost nothing in the backward pass.
//! [`Var::backward`] walks the tape once in reverse order and returns the
//! gradients of every differentiable node.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rustfft::num_complex::Complex64;

use super::kernels::{col2im, gemm, im2col, ConvGeom, RealDft};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Default)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    dfts: HashMap<usize, Rc<RealDft>>,
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    /// top, bottom, left, right
    pub padding: (usize, usize, usize, usize),
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Pow(usize, f64),
    ClampMin(usize, f64),
    Slice { x: usize, axis: usize, start: usize },
    Concat { xs: Vec<usize>, axis: usize },
    Pad { x: usize, axis: usize, before: usize },
    Conv2d { x: usize, w: usize, spec: Conv2dSpec },
    ConvT2d { x: usize, w: usize, spec: Conv2dSpec },
    LogSoftmax(usize),
    Frame { x: usize, hop: usize },
    OverlapAdd { x: usize, hop: usize },
    Rdft(usize),
    Irdft(usize),
    Embedding { weight: usize, ids: Vec<usize> },
    MagPow { re: usize, im: usize, p: f64, floor: f64 },
    Compress { re: usize, im: usize, p: f64, floor: f64, imag: bool },
}

/// Handle to a node on a [`Graph`].
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: usize,
}

/// Result of a backward pass: one optional buffer per graph node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::shape(op, format!("{a:?} vs {b:?}"))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Row-major strides of `shape` aligned to `out` (zero on broadcast dims).
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut o = 0;
    loop {
        let mut base_a = 0;
        let mut base_b = 0;
        for d in 0..rank - 1 {
            base_a += idx[d] * sa[d];
            base_b += idx[d] * sb[d];
        }
        for j in 0..inner {
            f(o, base_a + j * ia, base_b + j * ib);
            o += 1;
        }
        if o == total {
            break;
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Splits a shape around `axis` into (outer, n, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_into(src: &[f64], shape: &[usize], perm: &[usize], dst: &mut [f64]) {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zero = vec![0; rank];
    let mut k = 0;
    for_each_broadcast(&out_shape, &strides, &zero, |_, ai, _| {
        dst[k] = src[ai];
        k += 1;
    });
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let mut tape = self.tape.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| tape.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        tape.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var {
            graph: self.clone(),
            id: tape.nodes.len() - 1,
        }
    }

    fn leaf_node(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            graph: self.clone(),
            id: tape.nodes.len() - 1,
        }
    }

    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(shape_err("constant", shape, &[data.len()]));
        }
        Ok(self.leaf_node(shape.to_vec(), data, false))
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf_node(vec![], vec![value], false)
    }

    /// Differentiable leaf initialised from raw data.
    pub fn variable(&self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(shape_err("variable", shape, &[data.len()]));
        }
        Ok(self.leaf_node(shape.to_vec(), data, true))
    }

    /// Leaf mirroring `t`; differentiable only if `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.leaf_node(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    fn dft(&self, n: usize) -> Rc<RealDft> {
        let mut tape = self.tape.borrow_mut();
        tape.dfts
            .entry(n)
            .or_insert_with(|| Rc::new(RealDft::new(n)))
            .clone()
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        let shapes: Vec<Vec<usize>> = xs.iter().map(|x| x.shape()).collect();
        for s in &shapes {
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut value = vec![0.0; numel(&out_shape)];
        {
            let tape = self.tape.borrow();
            let mut offset = 0;
            for (x, s) in xs.iter().zip(&shapes) {
                let n = s[axis];
                let src = &tape.nodes[x.id].value;
                for o in 0..outer {
                    let d0 = (o * total + offset) * inner;
                    let s0 = o * n * inner;
                    value[d0..d0 + n * inner].copy_from_slice(&src[s0..s0 + n * inner]);
                }
                offset += n;
            }
        }
        let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
        Ok(self.push(out_shape, value, Op::Concat { xs: ids.clone(), axis }, &ids))
    }

    /// Rows of `weight` (`V×E`) selected by `ids`, giving `ids.len()×E`.
    pub fn embedding(&self, weight: &Var, ids: &[usize]) -> Result<Var> {
        let shape = weight.shape();
        if shape.len() != 2 {
            return Err(Error::shape("embedding", format!("weight {shape:?}")));
        }
        let (v, e) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Token { id: bad, vocab: v });
        }
        let mut value = Vec::with_capacity(ids.len() * e);
        {
            let tape = self.tape.borrow();
            let w = &tape.nodes[weight.id].value;
            for &i in ids {
                value.extend_from_slice(&w[i * e..(i + 1) * e]);
            }
        }
        Ok(self.push(
            vec![ids.len(), e],
            value,
            Op::Embedding {
                weight: weight.id,
                ids: ids.to_vec(),
            },
            &[weight.id],
        ))
    }
}

impl Var {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.tape.borrow().nodes[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tape.borrow().nodes[self.id].requires_grad
    }

    pub fn value(&self) -> Vec<f64> {
        self.graph.tape.borrow().nodes[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.graph.tape.borrow().nodes[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.with_value(|v| v[0])
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let n = &tape.nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect())
        };
        self.graph.push(shape, value, op, &[self.id])
    }

    fn binary(
        &self,
        other: &Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let b = &tape.nodes[other.id];
            if a.shape == b.shape {
                let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
                (a.shape.clone(), v)
            } else {
                let out = broadcast_shape(&a.shape, &b.shape)
                    .ok_or_else(|| shape_err(name, &a.shape, &b.shape))?;
                let sa = aligned_strides(&a.shape, &out);
                let sb = aligned_strides(&b.shape, &out);
                let mut v = vec![0.0; numel(&out)];
                for_each_broadcast(&out, &sa, &sb, |o, i, j| v[o] = f(a.value[i], b.value[j]));
                (out, v)
            }
        };
        Ok(self.graph.push(shape, value, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn neg(&self) -> Var {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Var {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(self.id, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn exp(&self) -> Var {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(&self) -> Var {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn powf(&self, p: f64) -> Var {
        self.unary(Op::Pow(self.id, p), |x| fast_pow(x, p))
    }

    pub fn square(&self) -> Var {
        self.powf(2.0)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Var {
        self.unary(Op::ClampMin(self.id, floor), |x| x.max(floor))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let b = &tape.nodes[other.id];
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(shape_err("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a.value, false, &b.value, false, &mut c, 0.0);
            (vec![m, n], c)
        };
        Ok(self
            .graph
            .push(shape, value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let mut seen = vec![false; a.shape.len()];
            if perm.len() != a.shape.len()
                || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(shape_err("permute", &a.shape, perm));
            }
            let out: Vec<usize> = perm.iter().map(|&p| a.shape[p]).collect();
            let mut v = vec![0.0; a.value.len()];
            permute_into(&a.value, &a.shape, perm, &mut v);
            (out, v)
        };
        Ok(self
            .graph
            .push(shape, value, Op::Permute(self.id, perm.to_vec()), &[self.id]))
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Var> {
        self.permute(&[1, 0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if numel(shape) != a.value.len() {
                return Err(shape_err("reshape", &a.shape, shape));
            }
            a.value.clone()
        };
        Ok(self
            .graph
            .push(shape.to_vec(), value, Op::Reshape(self.id), &[self.id]))
    }

    pub fn sum(&self) -> Var {
        let s = self.with_value(|v| v.iter().sum());
        self.graph.push(vec![], vec![s], Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if axis >= a.shape.len() {
                return Err(Error::shape("sum_axis", format!("axis {axis} for {:?}", a.shape)));
            }
            let (outer, n, inner) = split_axis(&a.shape, axis);
            let mut v = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &a.value[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, s) in v[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            let mut shape = a.shape.clone();
            if keepdim {
                shape[axis] = 1;
            } else {
                shape.remove(axis);
            }
            (shape, v)
        };
        Ok(self
            .graph
            .push(shape, value, Op::SumAxis(self.id, axis), &[self.id]))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var> {
        let n = self.shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n as f64))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if axis >= a.shape.len() || start + len > a.shape[axis] {
                return Err(Error::shape(
                    "slice",
                    format!("[{start}, {}) on axis {axis} of {:?}", start + len, a.shape),
                ));
            }
            let (outer, n, inner) = split_axis(&a.shape, axis);
            let mut v = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s0 = (o * n + start) * inner;
                v.extend_from_slice(&a.value[s0..s0 + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, v)
        };
        Ok(self.graph.push(
            shape,
            value,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Zero padding along one axis.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if axis >= a.shape.len() {
                return Err(Error::shape("pad", format!("axis {axis} for {:?}", a.shape)));
            }
            let (outer, n, inner) = split_axis(&a.shape, axis);
            let m = n + before + after;
            let mut v = vec![0.0; outer * m * inner];
            for o in 0..outer {
                let d0 = (o * m + before) * inner;
                v[d0..d0 + n * inner].copy_from_slice(&a.value[o * n * inner..(o + 1) * n * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = m;
            (shape, v)
        };
        Ok(self.graph.push(
            shape,
            value,
            Op::Pad {
                x: self.id,
                axis,
                before,
            },
            &[self.id],
        ))
    }

    /// Cross-correlation of `self` (`B×Ci×H×W`) with `w` (`Co×Ci×kh×kw`).
    pub fn conv2d(&self, w: &Var, spec: Conv2dSpec) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let x = &tape.nodes[self.id];
            let wn = &tape.nodes[w.id];
            let (b, geom, co) = conv_geom(&x.shape, &wn.shape, spec)?;
            let (m, k, n) = (co, geom.col_rows(), geom.col_cols());
            let in_sz = geom.channels * geom.height * geom.width;
            let mut out = vec![0.0; b * m * n];
            let mut cols = vec![0.0; k * n];
            for bi in 0..b {
                im2col(&x.value[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
                gemm(m, k, n, &wn.value, false, &cols, false, &mut out[bi * m * n..(bi + 1) * m * n], 0.0);
            }
            (vec![b, co, geom.out_h, geom.out_w], out)
        };
        Ok(self.graph.push(
            shape,
            value,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                spec,
            },
            &[self.id, w.id],
        ))
    }

    /// Transposed convolution: `self` is `B×Ci×H×W`, `w` is `Ci×Co×kh×kw`,
    /// `spec.padding` crops the full output. Adjoint of [`Var::conv2d`].
    pub fn conv_transpose2d(&self, w: &Var, spec: Conv2dSpec) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let x = &tape.nodes[self.id];
            let wn = &tape.nodes[w.id];
            let (b, geom, ci) = convt_geom(&x.shape, &wn.shape, spec)?;
            let (m, k, n) = (geom.col_rows(), ci, geom.col_cols());
            let out_sz = geom.channels * geom.height * geom.width;
            let mut out = vec![0.0; b * out_sz];
            let mut cols = vec![0.0; m * n];
            for bi in 0..b {
                gemm(m, k, n, &wn.value, true, &x.value[bi * k * n..(bi + 1) * k * n], false, &mut cols, 0.0);
                col2im(&cols, &geom, &mut out[bi * out_sz..(bi + 1) * out_sz]);
            }
            (vec![b, geom.channels, geom.height, geom.width], out)
        };
        Ok(self.graph.push(
            shape,
            value,
            Op::ConvT2d {
                x: self.id,
                w: w.id,
                spec,
            },
            &[self.id, w.id],
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let n = *a
                .shape
                .last()
                .ok_or_else(|| Error::shape("log_softmax", "scalar input"))?;
            let mut v = a.value.clone();
            for row in v.chunks_mut(n.max(1)) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
            (a.shape.clone(), v)
        };
        Ok(self
            .graph
            .push(shape, value, Op::LogSoftmax(self.id), &[self.id]))
    }

    pub fn softmax(&self) -> Result<Var> {
        Ok(self.log_softmax()?.exp())
    }

    /// Slices `B×L` signals into `B×F×frame_len` frames with the given hop.
    pub fn frame(&self, frame_len: usize, hop: usize) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if a.shape.len() != 2 || hop == 0 {
                return Err(Error::shape("frame", format!("input {:?}, hop {hop}", a.shape)));
            }
            let (b, l) = (a.shape[0], a.shape[1]);
            if l < frame_len {
                return Err(Error::Length { got: l, need: frame_len });
            }
            let f = 1 + (l - frame_len) / hop;
            let mut v = Vec::with_capacity(b * f * frame_len);
            for bi in 0..b {
                for t in 0..f {
                    let s = bi * l + t * hop;
                    v.extend_from_slice(&a.value[s..s + frame_len]);
                }
            }
            (vec![b, f, frame_len], v)
        };
        Ok(self
            .graph
            .push(shape, value, Op::Frame { x: self.id, hop }, &[self.id]))
    }

    /// Overlap-adds `B×F×N` frames into `B×((F−1)·hop + N)` signals.
    pub fn overlap_add(&self, hop: usize) -> Result<Var> {
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            if a.shape.len() != 3 || a.shape[1] == 0 {
                return Err(Error::shape("overlap_add", format!("input {:?}", a.shape)));
            }
            let (b, f, n) = (a.shape[0], a.shape[1], a.shape[2]);
            let l = (f - 1) * hop + n;
            let mut v = vec![0.0; b * l];
            for bi in 0..b {
                for t in 0..f {
                    let src = &a.value[(bi * f + t) * n..(bi * f + t + 1) * n];
                    let dst = &mut v[bi * l + t * hop..bi * l + t * hop + n];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            (vec![b, l], v)
        };
        Ok(self
            .graph
            .push(shape, value, Op::OverlapAdd { x: self.id, hop }, &[self.id]))
    }

    /// Real DFT over the last axis (`N`), producing `[re(K), im(K)]` with
    /// `K = N/2 + 1`.
    pub fn rdft(&self) -> Result<Var> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("rdft", "scalar input"))?;
        if n == 0 {
            return Err(Error::shape("rdft", "empty frames"));
        }
        let dft = self.graph.dft(n);
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let k = dft.bins();
            let rows = a.value.len() / n;
            let mut v = vec![0.0; rows * 2 * k];
            let mut buf = Vec::with_capacity(n);
            for r in 0..rows {
                dft.forward(&a.value[r * n..(r + 1) * n], &mut v[r * 2 * k..(r + 1) * 2 * k], &mut buf);
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = 2 * k;
            (shape, v)
        };
        Ok(self.graph.push(shape, value, Op::Rdft(self.id), &[self.id]))
    }

    /// Inverse of [`Var::rdft`] for even frame length `n`.
    pub fn irdft(&self, n: usize) -> Result<Var> {
        let shape = self.shape();
        let last = *shape
            .last()
            .ok_or_else(|| Error::shape("irdft", "scalar input"))?;
        if n == 0 || n % 2 != 0 || last != 2 * (n / 2 + 1) {
            return Err(Error::shape("irdft", format!("input {shape:?} for frame length {n}")));
        }
        let dft = self.graph.dft(n);
        let (shape, value) = {
            let tape = self.graph.tape.borrow();
            let a = &tape.nodes[self.id];
            let rows = a.value.len() / last;
            let mut v = vec![0.0; rows * n];
            let mut buf = Vec::with_capacity(n);
            for r in 0..rows {
                dft.inverse(&a.value[r * last..(r + 1) * last], &mut v[r * n..(r + 1) * n], &mut buf);
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = n;
            (shape, v)
        };
        Ok(self.graph.push(shape, value, Op::Irdft(self.id), &[self.id]))
    }

    /// `|z|^p` for `z = re + j·im`. The value is exact (0 at the origin);
    /// derivatives use `max(|z|, floor)` so they stay finite.
    pub fn mag_pow(re: &Var, im: &Var, p: f64, floor: f64) -> Result<Var> {
        let (shape, value) = {
            let tape = re.graph.tape.borrow();
            let a = &tape.nodes[re.id];
            let b = &tape.nodes[im.id];
            if a.shape != b.shape {
                return Err(shape_err("mag_pow", &a.shape, &b.shape));
            }
            let v = a
                .value
                .iter()
                .zip(&b.value)
                .map(|(&x, &y)| x.hypot(y).powf(p))
                .collect();
            (a.shape.clone(), v)
        };
        Ok(re.graph.push(
            shape,
            value,
            Op::MagPow {
                re: re.id,
                im: im.id,
                p,
                floor,
            },
            &[re.id, im.id],
        ))
    }

    /// Real or imaginary part of `|z|^p · e^{jφ(z)}`; zero at the origin
    /// (phase 0 convention). Derivatives use `max(|z|, floor)`.
    pub fn compress(re: &Var, im: &Var, p: f64, floor: f64, imag: bool) -> Result<Var> {
        let (shape, value) = {
            let tape = re.graph.tape.borrow();
            let a = &tape.nodes[re.id];
            let b = &tape.nodes[im.id];
            if a.shape != b.shape {
                return Err(shape_err("compress", &a.shape, &b.shape));
            }
            let v = a
                .value
                .iter()
                .zip(&b.value)
                .map(|(&x, &y)| {
                    let m = x.hypot(y);
                    if m == 0.0 {
                        0.0
                    } else {
                        (if imag { y } else { x }) * m.powf(p - 1.0)
                    }
                })
                .collect();
            (a.shape.clone(), v)
        };
        Ok(re.graph.push(
            shape,
            value,
            Op::Compress {
                re: re.id,
                im: im.id,
                p,
                floor,
                imag,
            },
            &[re.id, im.id],
        ))
    }

    /// Reverse pass from a scalar. Gradients are returned for every node
    /// that requires them; nothing is written to parameter tensors here.
    pub fn backward(&self) -> Result<Gradients> {
        let tape = self.graph.tape.borrow();
        let root = &tape.nodes[self.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[self.id] = Some(vec![1.0]);
        let mut buf = Vec::new();
        for i in (0..=self.id).rev() {
            let node = &tape.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&tape, node, &g, &mut grads, &mut buf);
        }
        Ok(Gradients { grads })
    }
}

fn conv_geom(xs: &[usize], ws: &[usize], spec: Conv2dSpec) -> Result<(usize, ConvGeom, usize)> {
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(shape_err("conv2d", xs, ws));
    }
    let (pt, pb, pl, pr) = spec.padding;
    let (h, w) = (xs[2] + pt + pb, xs[3] + pl + pr);
    if h < ws[2] || w < ws[3] {
        return Err(shape_err("conv2d", xs, ws));
    }
    let geom = ConvGeom {
        channels: xs[1],
        height: xs[2],
        width: xs[3],
        kh: ws[2],
        kw: ws[3],
        sh: spec.stride.0,
        sw: spec.stride.1,
        pad_top: pt,
        pad_left: pl,
        out_h: (h - ws[2]) / spec.stride.0 + 1,
        out_w: (w - ws[3]) / spec.stride.1 + 1,
    };
    Ok((xs[0], geom, ws[0]))
}

/// Geometry of the *output* image of a transposed convolution, expressed as
/// the forward convolution that maps it back to the input grid.
fn convt_geom(xs: &[usize], ws: &[usize], spec: Conv2dSpec) -> Result<(usize, ConvGeom, usize)> {
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(shape_err("conv_transpose2d", xs, ws));
    }
    let (pt, pb, pl, pr) = spec.padding;
    let full_h = (xs[2] - 1) * spec.stride.0 + ws[2];
    let full_w = (xs[3] - 1) * spec.stride.1 + ws[3];
    if full_h <= pt + pb || full_w <= pl + pr || xs[2] == 0 || xs[3] == 0 {
        return Err(shape_err("conv_transpose2d", xs, ws));
    }
    let geom = ConvGeom {
        channels: ws[1],
        height: full_h - pt - pb,
        width: full_w - pl - pr,
        kh: ws[2],
        kw: ws[3],
        sh: spec.stride.0,
        sw: spec.stride.1,
        pad_top: pt,
        pad_left: pl,
        out_h: xs[2],
        out_w: xs[3],
    };
    Ok((xs[0], geom, xs[1]))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn fast_pow(x: f64, p: f64) -> f64 {
    match p {
        0.0 => 1.0,
        1.0 => x,
        2.0 => x * x,
        0.5 => x.sqrt(),
        -1.0 => 1.0 / x,
        -2.0 => 1.0 / (x * x),
        _ => x.powf(p),
    }
}

/// Adds an owned gradient, moving it into place when none exists yet.
fn accumulate_owned(grads: &mut [Option<Vec<f64>>], tape: &Tape, id: usize, v: Vec<f64>) {
    if !tape.nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(d) => d.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        slot => *slot = Some(v),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], tape: &Tape, id: usize, f: impl FnOnce(&mut [f64])) {
    if !tape.nodes[id].requires_grad {
        return;
    }
    let len = tape.nodes[id].value.len();
    let g = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn elementwise(
    grads: &mut [Option<Vec<f64>>],
    tape: &Tape,
    x: usize,
    g: &[f64],
    f: impl Fn(usize, f64) -> f64,
) {
    if !tape.nodes[x].requires_grad {
        return;
    }
    match &mut grads[x] {
        Some(gx) => {
            for (i, (d, &gi)) in gx.iter_mut().zip(g).enumerate() {
                *d += f(i, gi);
            }
        }
        slot => *slot = Some(g.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect()),
    }
}

fn binary_backward(
    grads: &mut [Option<Vec<f64>>],
    tape: &Tape,
    node: &Node,
    a: usize,
    b: usize,
    g: &[f64],
    da: impl Fn(f64, f64, f64) -> f64,
    db: impl Fn(f64, f64, f64) -> f64,
) {
    let (an, bn) = (&tape.nodes[a], &tape.nodes[b]);
    let (av, bv) = (&an.value, &bn.value);
    let same = an.shape == node.shape && bn.shape == node.shape;
    let sa = aligned_strides(&an.shape, &node.shape);
    let sb = aligned_strides(&bn.shape, &node.shape);
    if an.requires_grad {
        let ga = if same {
            (0..g.len()).map(|i| da(g[i], av[i], bv[i])).collect()
        } else if an.shape == node.shape {
            let mut ga = Vec::with_capacity(g.len());
            for_each_broadcast(&node.shape, &sa, &sb, |o, _, j| ga.push(da(g[o], av[o], bv[j])));
            ga
        } else {
            let mut ga = vec![0.0; av.len()];
            for_each_broadcast(&node.shape, &sa, &sb, |o, i, j| ga[i] += da(g[o], av[i], bv[j]));
            ga
        };
        accumulate_owned(grads, tape, a, ga);
    }
    if bn.requires_grad {
        let gb = if same {
            (0..g.len()).map(|i| db(g[i], av[i], bv[i])).collect()
        } else if bn.shape == node.shape {
            let mut gb = Vec::with_capacity(g.len());
            for_each_broadcast(&node.shape, &sa, &sb, |o, i, _| gb.push(db(g[o], av[i], bv[o])));
            gb
        } else {
            let mut gb = vec![0.0; bv.len()];
            for_each_broadcast(&node.shape, &sa, &sb, |o, i, j| gb[j] += db(g[o], av[i], bv[j]));
            gb
        };
        accumulate_owned(grads, tape, b, gb);
    }
}

fn backward_node(
    tape: &Tape,
    node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    buf: &mut Vec<Complex64>,
) {
    let val = |id: usize| -> &[f64] { &tape.nodes[id].value };
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => binary_backward(grads, tape, node, *a, *b, g, |g, _, _| g, |g, _, _| g),
        Op::Sub(a, b) => binary_backward(grads, tape, node, *a, *b, g, |g, _, _| g, |g, _, _| -g),
        Op::Mul(a, b) => binary_backward(grads, tape, node, *a, *b, g, |g, _, y| g * y, |g, x, _| g * x),
        Op::Div(a, b) => binary_backward(
            grads,
            tape,
            node,
            *a,
            *b,
            g,
            |g, _, y| g / y,
            |g, x, y| -g * x / (y * y),
        ),
        Op::Neg(x) => elementwise(grads, tape, *x, g, |_, g| -g),
        Op::Scale(x, c) => elementwise(grads, tape, *x, g, |_, g| c * g),
        Op::AddScalar(x) => elementwise(grads, tape, *x, g, |_, g| g),
        Op::Sigmoid(x) => elementwise(grads, tape, *x, g, |i, g| g * y[i] * (1.0 - y[i])),
        Op::Tanh(x) => elementwise(grads, tape, *x, g, |i, g| g * (1.0 - y[i] * y[i])),
        Op::LeakyRelu(x, s) => {
            let xv = val(*x);
            elementwise(grads, tape, *x, g, |i, g| if xv[i] > 0.0 { g } else { s * g })
        }
        Op::Exp(x) => elementwise(grads, tape, *x, g, |i, g| g * y[i]),
        Op::Log(x) => {
            let xv = val(*x);
            elementwise(grads, tape, *x, g, |i, g| g / xv[i])
        }
        Op::Sqrt(x) => elementwise(grads, tape, *x, g, |i, g| g * 0.5 / y[i]),
        Op::Pow(x, p) => {
            let xv = val(*x);
            elementwise(grads, tape, *x, g, |i, g| g * p * fast_pow(xv[i], p - 1.0))
        }
        Op::ClampMin(x, floor) => {
            let xv = val(*x);
            elementwise(grads, tape, *x, g, |i, g| if xv[i] > *floor { g } else { 0.0 })
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (&tape.nodes[*a].shape, &tape.nodes[*b].shape);
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (av, bv) = (val(*a), val(*b));
            accumulate(grads, tape, *a, |ga| gemm(m, n, k, g, false, bv, true, ga, 1.0));
            accumulate(grads, tape, *b, |gb| gemm(k, m, n, av, true, g, false, gb, 1.0));
        }
        Op::Permute(x, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let mut back = vec![0.0; g.len()];
            permute_into(g, &node.shape, &inv, &mut back);
            accumulate_owned(grads, tape, *x, back);
        }
        Op::Reshape(x) => accumulate_owned(grads, tape, *x, g.to_vec()),
        Op::SumAll(x) => accumulate(grads, tape, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0])),
        Op::SumAxis(x, axis) => {
            let (outer, n, inner) = split_axis(&tape.nodes[*x].shape, *axis);
            accumulate(grads, tape, *x, |gx| {
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            });
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = split_axis(&tape.nodes[*x].shape, *axis);
            let len = node.shape[*axis];
            accumulate(grads, tape, *x, |gx| {
                for o in 0..outer {
                    let d0 = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[d0..d0 + len * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, b)| *a += b);
                }
            });
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for &x in xs {
                let n = tape.nodes[x].shape[*axis];
                accumulate(grads, tape, x, |gx| {
                    for o in 0..outer {
                        let s0 = (o * total + offset) * inner;
                        gx[o * n * inner..(o + 1) * n * inner]
                            .iter_mut()
                            .zip(&g[s0..s0 + n * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                });
                offset += n;
            }
        }
        Op::Pad { x, axis, before } => {
            let (outer, n, inner) = split_axis(&tape.nodes[*x].shape, *axis);
            let m = node.shape[*axis];
            accumulate(grads, tape, *x, |gx| {
                for o in 0..outer {
                    let s0 = (o * m + before) * inner;
                    gx[o * n * inner..(o + 1) * n * inner]
                        .iter_mut()
                        .zip(&g[s0..s0 + n * inner])
                        .for_each(|(a, b)| *a += b);
                }
            });
        }
        Op::Conv2d { x, w, spec } => {
            let (xn, wn) = (&tape.nodes[*x], &tape.nodes[*w]);
            let (b, geom, co) = conv_geom(&xn.shape, &wn.shape, *spec).expect("validated in forward");
            let (m, k, n) = (co, geom.col_rows(), geom.col_cols());
            let in_sz = geom.channels * geom.height * geom.width;
            let mut cols = vec![0.0; k * n];
            if wn.requires_grad {
                let mut gw = vec![0.0; m * k];
                for bi in 0..b {
                    im2col(&xn.value[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
                    gemm(m, n, k, &g[bi * m * n..(bi + 1) * m * n], false, &cols, true, &mut gw, 1.0);
                }
                accumulate_owned(grads, tape, *w, gw);
            }
            if xn.requires_grad {
                let mut gx = vec![0.0; xn.value.len()];
                for bi in 0..b {
                    gemm(k, m, n, &wn.value, true, &g[bi * m * n..(bi + 1) * m * n], false, &mut cols, 0.0);
                    col2im(&cols, &geom, &mut gx[bi * in_sz..(bi + 1) * in_sz]);
                }
                accumulate_owned(grads, tape, *x, gx);
            }
        }
        Op::ConvT2d { x, w, spec } => {
            let (xn, wn) = (&tape.nodes[*x], &tape.nodes[*w]);
            let (b, geom, ci) = convt_geom(&xn.shape, &wn.shape, *spec).expect("validated in forward");
            let (m, n) = (geom.col_rows(), geom.col_cols());
            let out_sz = geom.channels * geom.height * geom.width;
            let mut cols = vec![0.0; m * n];
            let mut gw = vec![0.0; ci * m];
            let mut gx = vec![0.0; xn.value.len()];
            for bi in 0..b {
                im2col(&g[bi * out_sz..(bi + 1) * out_sz], &geom, &mut cols);
                if wn.requires_grad {
                    gemm(ci, n, m, &xn.value[bi * ci * n..(bi + 1) * ci * n], false, &cols, true, &mut gw, 1.0);
                }
                if xn.requires_grad {
                    gemm(ci, m, n, &wn.value, false, &cols, false, &mut gx[bi * ci * n..(bi + 1) * ci * n], 0.0);
                }
            }
            accumulate_owned(grads, tape, *w, gw);
            accumulate_owned(grads, tape, *x, gx);
        }
        Op::LogSoftmax(x) => {
            let n = *node.shape.last().unwrap();
            accumulate(grads, tape, *x, |gx| {
                for ((gr, yr), dr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..n {
                        dr[j] += gr[j] - yr[j].exp() * s;
                    }
                }
            });
        }
        Op::Frame { x, hop } => {
            let (b, f, n) = (node.shape[0], node.shape[1], node.shape[2]);
            let l = tape.nodes[*x].shape[1];
            accumulate(grads, tape, *x, |gx| {
                for bi in 0..b {
                    for t in 0..f {
                        let src = &g[(bi * f + t) * n..(bi * f + t + 1) * n];
                        let d0 = bi * l + t * hop;
                        gx[d0..d0 + n].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                    }
                }
            });
        }
        Op::OverlapAdd { x, hop } => {
            let s = &tape.nodes[*x].shape;
            let (b, f, n) = (s[0], s[1], s[2]);
            let l = node.shape[1];
            accumulate(grads, tape, *x, |gx| {
                for bi in 0..b {
                    for t in 0..f {
                        let s0 = bi * l + t * hop;
                        gx[(bi * f + t) * n..(bi * f + t + 1) * n]
                            .iter_mut()
                            .zip(&g[s0..s0 + n])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            });
        }
        Op::Rdft(x) => {
            let n = *tape.nodes[*x].shape.last().unwrap();
            let dft = tape.dfts.get(&n).expect("planned in forward").clone();
            let kk = 2 * dft.bins();
            accumulate(grads, tape, *x, |gx| {
                for (gr, dr) in g.chunks(kk).zip(gx.chunks_mut(n)) {
                    dft.forward_adjoint(gr, dr, buf);
                }
            });
        }
        Op::Irdft(x) => {
            let n = *node.shape.last().unwrap();
            let dft = tape.dfts.get(&n).expect("planned in forward").clone();
            let kk = 2 * dft.bins();
            accumulate(grads, tape, *x, |gx| {
                for (gr, dr) in g.chunks(n).zip(gx.chunks_mut(kk)) {
                    dft.inverse_adjoint(gr, dr, buf);
                }
            });
        }
        Op::Embedding { weight, ids } => {
            let e = node.shape[1];
            accumulate(grads, tape, *weight, |gw| {
                for (r, &i) in ids.iter().enumerate() {
                    gw[i * e..(i + 1) * e]
                        .iter_mut()
                        .zip(&g[r * e..(r + 1) * e])
                        .for_each(|(a, b)| *a += b);
                }
            });
        }
        Op::MagPow { re, im, p, floor } => {
            let (rv, iv) = (val(*re), val(*im));
            // d|z|^p/dre = p |z|^(p-2) re
            let coef: Vec<f64> = rv
                .iter()
                .zip(iv)
                .zip(g)
                .map(|((&x, &y), &g)| g * p * x.hypot(y).max(*floor).powf(p - 2.0))
                .collect();
            elementwise(grads, tape, *re, &coef, |i, c| c * rv[i]);
            elementwise(grads, tape, *im, &coef, |i, c| c * iv[i]);
        }
        Op::Compress { re, im, p, floor, imag } => {
            let (rv, iv) = (val(*re), val(*im));
            let n = rv.len();
            let mut gre = vec![0.0; n];
            let mut gim = vec![0.0; n];
            for i in 0..n {
                let (x, yv) = (rv[i], iv[i]);
                let m = x.hypot(yv).max(*floor);
                let base = m.powf(p - 1.0);
                let cross = (p - 1.0) * m.powf(p - 3.0);
                let (own, other) = if *imag { (yv, x) } else { (x, yv) };
                let d_own = base + cross * own * own;
                let d_other = cross * own * other;
                if *imag {
                    gim[i] = g[i] * d_own;
                    gre[i] = g[i] * d_other;
                } else {
                    gre[i] = g[i] * d_own;
                    gim[i] = g[i] * d_other;
                }
            }
            accumulate(grads, tape, *re, |d| d.iter_mut().zip(&gre).for_each(|(a, b)| *a += b));
            accumulate(grads, tape, *im, |d| d.iter_mut().zip(&gim).for_each(|(a, b)| *a += b));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_small_vectors() {
        let g = Graph::new();
        let a = g.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = g.constant(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().value(), vec![4.0, 6.0]);
    }

    #[test]
    fn identity_matmul() {
        let g = Graph::new();
        let eye = g
            .constant(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.])
            .unwrap();
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let av = g.constant(&[3, 2], a.clone()).unwrap();
        assert_eq!(eye.matmul(&av).unwrap().value(), a);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let g = Graph::new();
        let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let err = a.matmul(&b).err().unwrap();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }), "{err}");
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn valid_conv_with_ones_kernel_sums_input() {
        let g = Graph::new();
        let x: Vec<f64> = (1..=9).map(|i| i as f64 * 0.5).collect();
        let xv = g.constant(&[1, 1, 3, 3], x.clone()).unwrap();
        let w = g.constant(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let spec = Conv2dSpec {
            stride: (1, 1),
            padding: (0, 0, 0, 0),
        };
        let out = xv.conv2d(&w, spec).unwrap();
        assert_eq!(out.shape(), vec![1, 1, 1, 1]);
        assert!((out.item() - x.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::new();
        let x = g.variable(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.square().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn linear_map_gradient_is_column_sums() {
        let g = Graph::new();
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let av = g.constant(&[2, 3], a).unwrap();
        let x = g.variable(&[3, 1], vec![0.3, -0.2, 0.9]).unwrap();
        let loss = av.matmul(&x).unwrap().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let g = Graph::new();
        let x = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.square().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcasting_reduces_gradient() {
        let g = Graph::new();
        let x = g.variable(&[2, 3], vec![1.0; 6]).unwrap();
        let b = g.variable(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.mul(&b).unwrap().sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&b).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(&x).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_only_graph_records_no_backward() {
        let g = Graph::new();
        let a = g.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.tanh().sum();
        assert!(!b.requires_grad());
        let grads = b.backward().unwrap();
        assert!(grads.get(&a).is_none());
    }

    #[test]
    fn frame_then_overlap_add_counts_coverage() {
        let g = Graph::new();
        let x = g.constant(&[1, 8], vec![1.0; 8]).unwrap();
        let y = x.frame(4, 2).unwrap().overlap_add(2).unwrap();
        assert_eq!(y.value(), vec![1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.0, 1.0]);
    }
}
