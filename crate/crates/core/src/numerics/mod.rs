//! Dense `f64` tensors and a reverse-mode differentiation tape.

mod graph;
mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{add_row, affine, layer_norm, matmul, matmul_nt, matmul_tn, softmax, softmax_masked, DEFAULT_LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} is invalid for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("layer_norm eps must be positive, got {0}")]
    Eps(f64),
    #[error("backward seed must be scalar, got shape {shape:?}")]
    NonScalarSeed { shape: Vec<usize> },
    #[error("softmax slice {slice} has every entry masked")]
    FullyMasked { slice: usize },
    #[error("{0}")]
    Invalid(String),
}
