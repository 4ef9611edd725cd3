//! Dense 64-bit tensors, the shared kernels, and tape-based reverse-mode
//! differentiation that the encoder and training loop are built on.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use ops::{cosine, gelu, layer_norm, matmul, matmul_nt, softmax};
pub use tape::{CustomOp, Eager, Gradients, Graph, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("axis {axis} is invalid for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("{op}: last axis has zero length")]
    EmptyAxis { op: &'static str },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("cross-entropy needs at least one labelled position")]
    NoTargets,
    #[error("non-finite value at {context}")]
    NonFinite { context: String },
}
