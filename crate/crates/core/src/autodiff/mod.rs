//! Reverse-mode differentiation engine, parameter storage, optimizer and
//! checkpoint container.
//!
//! Complex quantities are carried as pairs of real tensors; every complex
//! layer reduces to the real primitives defined here.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
