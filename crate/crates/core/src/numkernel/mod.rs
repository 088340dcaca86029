//! Dense real linear algebra and a reverse-mode differentiation tape.

mod linalg;
mod matrix;
mod tape;

pub use linalg::{eigenvalues, expm, is_positive_definite, linear_solve, symmetric_eigenvalues, Lu, PIVOT_TOLERANCE};
pub use matrix::Matrix;
pub use tape::{grad_check, mse, Activation, Gradients, NodeId, OpKind, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} requires a square matrix, got {shape:?}")]
    NotSquare { op: &'static str, shape: (usize, usize) },
    #[error("{op} expects a different number of inputs (got {got})")]
    Arity { op: &'static str, got: usize },
    #[error("matrix is singular or ill-conditioned: pivot {pivot:e} at column {index}")]
    Singular { pivot: f64, index: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("backward requires a 1x1 root, got {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("{op} did not converge after {iterations} iterations")]
    NoConvergence { op: &'static str, iterations: usize },
}
