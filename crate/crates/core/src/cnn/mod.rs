//! Complex-valued layers built from real graph primitives.
//!
//! A complex activation is a pair of real tensors of identical shape. Layers
//! register their parameters in a [`ParamStore`] at construction and read
//! them back from a [`Bound`] during the forward pass.

mod conv;
mod dense;
mod lstm;
mod norm;

pub use conv::{ComplexConv2d, ComplexDeconv2d, PaddingMode};
pub use dense::{ComplexDense, Dense};
pub use lstm::{ComplexLstm, Lstm};
pub use norm::{BufferUpdate, ComplexBatchNorm};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Leaky-rectifier slope used after every normalization.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone)]
pub struct ComplexTensor {
    pub re: Var,
    pub im: Var,
}

impl ComplexTensor {
    pub fn new(re: Var, im: Var) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape(
                "complex_tensor",
                format!("{:?} vs {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn constant(g: &Graph, shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        Self::new(g.constant(shape, re)?, g.constant(shape, im)?)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    pub fn graph(&self) -> &Graph {
        self.re.graph()
    }

    pub fn map(&self, f: impl Fn(&Var) -> Result<Var>) -> Result<Self> {
        Self::new(f(&self.re)?, f(&self.im)?)
    }

    /// Split-part leaky rectifier.
    pub fn leaky_relu(&self) -> Self {
        Self {
            re: self.re.leaky_relu(LEAKY_SLOPE),
            im: self.im.leaky_relu(LEAKY_SLOPE),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            re: self.re.scale(c),
            im: self.im.scale(c),
        }
    }

    /// Elementwise complex product.
    pub fn mul(&self, other: &ComplexTensor) -> Result<Self> {
        let re = self.re.mul(&other.re)?.sub(&self.im.mul(&other.im)?)?;
        let im = self.re.mul(&other.im)?.add(&self.im.mul(&other.re)?)?;
        Self::new(re, im)
    }

    /// Concatenation of both parts along `axis`.
    pub fn concat(parts: &[ComplexTensor], axis: usize) -> Result<Self> {
        let g = parts
            .first()
            .ok_or_else(|| Error::shape("complex_concat", "no inputs"))?
            .graph();
        let re: Vec<Var> = parts.iter().map(|p| p.re.clone()).collect();
        let im: Vec<Var> = parts.iter().map(|p| p.im.clone()).collect();
        Self::new(g.concat(&re, axis)?, g.concat(&im, axis)?)
    }

    /// Stacks real and imaginary parts along `axis`, doubling its length.
    pub(crate) fn stacked(&self, axis: usize) -> Result<Var> {
        self.graph().concat(&[self.re.clone(), self.im.clone()], axis)
    }

    /// Inverse of [`ComplexTensor::stacked`].
    pub(crate) fn unstack(v: &Var, axis: usize) -> Result<Self> {
        let n = v.shape()[axis];
        if n % 2 != 0 {
            return Err(Error::shape("unstack", format!("odd length {n} on axis {axis}")));
        }
        Self::new(v.slice(axis, 0, n / 2)?, v.slice(axis, n / 2, n / 2)?)
    }
}

/// Real block matrix `[[a, b], [c, d]]` from four blocks of equal shape,
/// concatenated along axes `row` and `col`.
pub(crate) fn block(g: &Graph, a: &Var, b: &Var, c: &Var, d: &Var, row: usize, col: usize) -> Result<Var> {
    let top = g.concat(&[a.clone(), b.clone()], col)?;
    let bottom = g.concat(&[c.clone(), d.clone()], col)?;
    g.concat(&[top, bottom], row)
}

/// Uniform initialization bound for a given fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Per-channel bias `[C]` broadcast over `B×C×H×W`.
pub(crate) fn channel_bias(x: &Var, b: &Var) -> Result<Var> {
    let c = b.numel();
    x.add(&b.reshape(&[1, c, 1, 1])?)
}
