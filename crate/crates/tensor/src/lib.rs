//! Dense `f64` tensors with tape-based reverse-mode differentiation, the op
//! set needed by small 1-d convolutional networks and MLPs, Adam, and JSON
//! parameter checkpoints.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{grad_check, grad_check_params};
pub use graph::{conv1d_out_len, Gradients, Graph, Var};
pub use params::{he_normal, Adam, GradBuffer, ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        TensorError::Shape { op, detail }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    graph::softplus(x)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    graph::sigmoid(x)
}
