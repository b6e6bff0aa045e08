//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s; calling
//! [`Graph::backward`] returns vector-Jacobian products for every node that
//! requires a gradient. Graphs are cheap and single-threaded: build one per
//! forward pass, and run independent graphs on separate threads when
//! parallelism is wanted.

mod conv;
mod graph;
pub mod gradcheck;
pub mod nn;
mod params;
pub mod snapshot;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{BoundParams, Param, ParamStore};
pub use tensor::Tensor;


#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid axis: {0}")]
    InvalidAxis(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("every target is masked out")]
    EmptyMask,
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}
