use std::ops::Index;

use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named tensors owned by a model.
///
/// Names are dotted paths (`encoder.0.conv.w_real`). Trainable tensors have
/// `requires_grad` set; buffers such as normalization statistics do not.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    learnable: Vec<bool>,
}

/// Graph leaves for every tensor of a store, in store order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Registers a tensor, rounding its values to f32 like every stored
    /// parameter.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        tensor.quantize_f32();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.learnable.push(tensor.requires_grad());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Trainable tensor drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let t = Tensor::new(shape, data).expect("sized above").with_grad(true);
        self.add(name, t)
    }

    pub fn add_constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64, trainable: bool) -> ParamId {
        self.add(name, Tensor::full(shape, value).with_grad(trainable))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Id of the `i`-th tensor in insertion order.
    pub fn id_at(&self, i: usize) -> ParamId {
        assert!(i < self.tensors.len(), "parameter index {i} out of range");
        ParamId(i)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn bind(&self, g: &Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.leaf(t)).collect(),
        }
    }

    /// Like [`ParamStore::bind`] but with tensor `id` replaced by `var`.
    pub fn bind_with(&self, g: &Graph, id: ParamId, var: &Var) -> Bound {
        let mut b = self.bind(g);
        b.vars[id.0] = var.clone();
        b
    }

    /// Adds the gradients of a backward pass into the trainable tensors.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &Gradients) {
        for (t, v) in self.tensors.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Freezes (`false`) or re-enables (`true`) every learnable tensor.
    /// Buffers never become trainable.
    pub fn set_trainable(&mut self, flag: bool) {
        for (t, &learnable) in self.tensors.iter_mut().zip(&self.learnable) {
            t.set_requires_grad(flag && learnable);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.tensors.iter().all(|t| !t.requires_grad())
    }

    pub fn is_learnable(&self, id: ParamId) -> bool {
        self.learnable[id.0]
    }

    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.requires_grad())
            .map(Tensor::numel)
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Global L2 norm over all present gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// FNV-1a over names, shapes and the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            for &d in t.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Copies values from `other` by name; shapes must agree and every
    /// tensor of `self` must be present.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let id = other
                .find(name)
                .ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    detail: format!("missing tensor {name}"),
                })?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(Error::shape(
                    "load",
                    format!("{name}: expected {:?}, found {:?}", t.shape(), src.shape()),
                ));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
