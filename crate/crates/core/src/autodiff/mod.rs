//! Dense-tensor reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation together with the values it
//! needs for the reverse pass. Reductions always run in ascending index
//! order, so forward values are bit-reproducible for a fixed operand order.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("expected a matrix, got shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("expected a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: segment {segment} is empty")]
    EmptySegment { op: &'static str, segment: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}
