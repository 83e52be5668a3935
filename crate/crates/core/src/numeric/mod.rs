//! Dense numeric kernel: tensors, differentiable primitives, seeded random
//! streams, SPD linear algebra and a finite-difference oracle.

mod gemm;
pub mod gradcheck;
pub mod linalg;
mod params;
mod primitive;
pub mod rng;
mod tape;
mod tensor;

pub use gradcheck::{compare_gradients, finite_difference_gradient, GradCheckReport};
pub use linalg::{cholesky, solve_spd};
pub use params::{GroupKind, NamedTensor, ParamGroup, ParamSet};
pub use primitive::{apply_primitive, sigmoid, vjp, Primitive};
pub use rng::RngStream;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{validate_finite, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected {expected} operands, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value in {what} at flat index {index}")]
    NonFinite { what: String, index: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix is not symmetric (entry {row},{col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("expected a square matrix, got shape {shape:?}")]
    NotSquare { shape: Vec<usize> },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("finite-difference oracle failed: loss is non-finite when perturbing {tensor}[{index}]")]
    OracleFailure { tensor: String, index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
