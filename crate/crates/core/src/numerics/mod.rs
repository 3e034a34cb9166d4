//! Dense `f64` tensors, a dynamic autodiff tape and first-order optimizers.

mod graph;
mod optim;
mod params;
mod tensor;

#[cfg(any(test, feature = "test-oracles"))]
pub mod gradcheck;

pub use graph::{
    log_softmax_values, sigmoid, softmax_values, Gradients, Graph, Var, LAYER_NORM_EPS,
};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Bound, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[cfg(test)]
mod tests;
