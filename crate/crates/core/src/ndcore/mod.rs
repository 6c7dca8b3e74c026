//! Dense `f64` tensors, a reverse-mode autodiff tape, and the binary tensor
//! format shared by checkpoints and feature files.

mod graph;
pub mod io;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::{log_sum_exp, softmax_slice, Tensor};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("index {index} out of range (bound {bound})")]
    OutOfRange { index: usize, bound: usize },
    #[error("empty axis")]
    EmptyAxis,
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; run a new forward pass")]
    BackwardTwice,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
