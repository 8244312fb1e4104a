//! Dense tensors with tape-based reverse-mode differentiation over the
//! operator set the outcome model needs, plus a central-difference oracle.

mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{
    check_op, finite_diff_grad, op_suite, relative_error, OpCheck, GRADCHECK_FLOOR, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use graph::{bce_value, Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
