//! Dense `f64` tensors with a dynamic, reverse-mode differentiated compute graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters live in a
//! [`ParamStore`] and are bound into the graph as trainable leaves.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{BoundParams, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::Tensor;
