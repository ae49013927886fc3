//! Dense tensors with reverse-mode differentiation.
//!
//! All arithmetic runs in `f64`. Forward passes are deterministic given
//! their inputs; dropout is deterministic given its RNG seed.

mod linalg;
mod nn;
mod tape;
mod tensor;

pub use nn::{DenseParams, PoolMode, CROSS_ENTROPY_EPS};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("tensor data length {actual} does not match shape product {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("cross_entropy: row {row} sums to {sum}, not a probability row")]
    NotProbabilities { row: usize, sum: f64 },
    #[error("cross_entropy: row {row} of the labels is not one-hot")]
    NotOneHot { row: usize },
}

#[cfg(test)]
mod nn_tests;
