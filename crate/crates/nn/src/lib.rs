//! Minimal differentiable computation for sequence models.
//!
//! A [`Graph`] records operations on row-major matrices as they execute and
//! replays them backwards to produce [`Gradients`] for the parameters held in a
//! [`ParameterStore`]. Graphs are cheap and per-example: build one per
//! utterance, call [`Graph::backward`], and sum the gradients across a batch
//! before an [`adam_step`].

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{Init, ParamId, ParameterStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
